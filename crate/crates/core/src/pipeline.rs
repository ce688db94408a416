//! End-to-end run: load, normalize and filter, partition, cluster each
//! subset, explain the clusters and assign priorities.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::{run_ap, run_ap_traced, ApParams, ClusterId, ClusterResult, Damping};
use crate::cart::{
    build_tree, build_tree_rooted, extract_rules, rank_attributes, AttributeRanking, DecisionRule,
    FeatureMatrix, TreeParams,
};
use crate::data::{
    self, load_dataset, normalize_and_filter, partition_by, Dataset, RemovedRecord, SchemaPolicy,
    COUNT_ATTRIBUTES, ESTIMATED_POPULATION, PUBLIC_WATER_SERVICE,
};
use crate::error::{Error, Result};
use crate::eval::{
    damping_sweep, default_damping_grid, silhouette_global, silhouette_per_point, SweepResult,
};
use crate::gower::{active_attributes, gower_matrix, to_similarity, DiceMode, Preference};
use crate::priority::{
    assign_priorities, default_rules, load_rules, profile_clusters, ClusterProfile,
    PriorityAssignment,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaChoice {
    /// The twelve-attribute water-access table.
    #[default]
    WaterAccess,
    /// Every non-metadata column, typed from its values.
    Infer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CartMode {
    /// One tree over all subsets, labels qualified by subset.
    #[default]
    Union,
    PerSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub schema: SchemaChoice,
    pub partition_attribute: String,
    pub count_attributes: Vec<String>,
    pub denominator: String,
    /// Scale applied to dissimilarities; must be negative.
    pub theta: f64,
    /// Fixed damping. When absent the grid is swept.
    pub damping: Option<f64>,
    pub damping_grid: Vec<f64>,
    pub max_iter: usize,
    pub stable_window: usize,
    pub tree: TreeParams,
    pub cart_mode: CartMode,
    /// In union mode, split the root on the partition attribute.
    pub root_on_partition: bool,
    pub dice_mode: DiceMode,
    pub rules_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write a per-iteration trace of the chosen run for each subset.
    pub trace: bool,
    /// Write the dissimilarity and similarity matrices for each subset.
    pub dump_matrices: bool,
    /// Also report the conventional per-point silhouette.
    pub per_point_silhouette: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ap = ApParams::default();
        Self {
            input: PathBuf::new(),
            schema: SchemaChoice::default(),
            partition_attribute: PUBLIC_WATER_SERVICE.to_string(),
            count_attributes: COUNT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            denominator: ESTIMATED_POPULATION.to_string(),
            theta: -1.0,
            damping: None,
            damping_grid: default_damping_grid(),
            max_iter: ap.max_iter,
            stable_window: ap.stable_window,
            tree: TreeParams::default(),
            cart_mode: CartMode::default(),
            root_on_partition: true,
            dice_mode: DiceMode::default(),
            rules_file: None,
            output_dir: None,
            trace: false,
            dump_matrices: false,
            per_point_silhouette: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.as_os_str().is_empty() {
            return Err(Error::Config("no input file given".into()));
        }
        if !(self.theta.is_finite() && self.theta < 0.0) {
            return Err(Error::Config(format!(
                "theta must be a negative number, got {}",
                self.theta
            )));
        }
        if let Some(g) = self.damping {
            Damping::new(g)?;
        } else {
            if self.damping_grid.is_empty() {
                return Err(Error::Config("damping grid is empty".into()));
            }
            for &g in &self.damping_grid {
                Damping::new(g)?;
            }
            if self.damping_grid.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Config(
                    "damping grid must be strictly increasing".into(),
                ));
            }
        }
        self.ap_params(Damping::default()).validate()?;
        if self.tree.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if !(self.tree.min_impurity_decrease >= 0.0 && self.tree.min_impurity_decrease.is_finite())
        {
            return Err(Error::Config(
                "min_impurity_decrease must be a non-negative number".into(),
            ));
        }
        if self.partition_attribute.trim().is_empty() {
            return Err(Error::Config("partition attribute is empty".into()));
        }
        if self.denominator.trim().is_empty() {
            return Err(Error::Config("denominator attribute is empty".into()));
        }
        Ok(())
    }

    fn ap_params(&self, damping: Damping) -> ApParams {
        ApParams {
            damping,
            max_iter: self.max_iter,
            stable_window: self.stable_window,
        }
    }

    fn schema_policy(&self) -> SchemaPolicy {
        match self.schema {
            SchemaChoice::WaterAccess => SchemaPolicy::Explicit(data::water_access_schema()),
            SchemaChoice::Infer => SchemaPolicy::InferFromHeader,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Config,
    Load,
    Filter,
    Partition,
    Cluster,
    Explain,
    Prioritize,
    Write,
}

impl std::fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PipelineStage::Config => "config",
            PipelineStage::Load => "load",
            PipelineStage::Filter => "filter",
            PipelineStage::Partition => "partition",
            PipelineStage::Cluster => "cluster",
            PipelineStage::Explain => "explain",
            PipelineStage::Prioritize => "prioritize",
            PipelineStage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: PipelineStage,
    #[source]
    pub source: Error,
}

trait StageExt<T> {
    fn stage(self, stage: PipelineStage) -> Result<T, PipelineError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: PipelineStage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// Cluster-by-state counts for one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTable {
    pub states: Vec<String>,
    /// Largest cluster first.
    pub rows: Vec<StateRow>,
    /// Column totals, aligned with `states`.
    pub totals: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub cluster: ClusterId,
    pub exemplar: String,
    pub counts: Vec<usize>,
    pub total: usize,
}

/// Counts records per cluster and state, rows sorted by cluster size
/// (descending, ties by cluster index).
pub fn tabulate_by_state(subset: &str, result: &ClusterResult, d: &Dataset) -> Result<StateTable> {
    if result.labels.len() != d.len() {
        return Err(Error::Input(format!(
            "{} labels for {} records",
            result.labels.len(),
            d.len()
        )));
    }
    let states: Vec<String> = d
        .records
        .iter()
        .map(|r| r.state.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids = result.cluster_ids();
    let mut rows: Vec<StateRow> = result
        .exemplars
        .iter()
        .enumerate()
        .map(|(c, &e)| StateRow {
            cluster: ClusterId::new(subset, c),
            exemplar: d.records[e].id.clone(),
            counts: vec![0; states.len()],
            total: 0,
        })
        .collect();
    let mut totals = vec![0; states.len()];
    for (record, &c) in d.records.iter().zip(&ids) {
        let s = states
            .binary_search(&record.state)
            .expect("state was collected");
        rows[c].counts[s] += 1;
        rows[c].total += 1;
        totals[s] += 1;
    }
    rows.sort_by(|a, b| {
        b.total
            .cmp(&a.total)
            .then(a.cluster.index.cmp(&b.cluster.index))
    });
    Ok(StateTable {
        states,
        rows,
        totals,
        total: d.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    /// Value of the partition attribute shared by the subset.
    pub value: String,
    pub records: usize,
    pub dropped_attributes: Vec<String>,
    pub active_attributes: Vec<String>,
    /// Absent when the damping was fixed or the subset was trivial.
    pub sweep: Option<SweepResult>,
    pub damping: f64,
    pub silhouette: f64,
    pub per_point_silhouette: Option<f64>,
    pub clusters: usize,
    pub converged: bool,
    pub iterations: usize,
    pub net_similarity: f64,
    /// Record ids of the exemplars, by cluster index.
    pub exemplars: Vec<String>,
    pub cluster_sizes: Vec<usize>,
    pub by_state: StateTable,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// `all` for the union tree, otherwise the subset value.
    pub scope: String,
    pub accuracy: f64,
    /// Attribute tested at the root, if the tree splits at all.
    pub root_attribute: Option<String>,
    pub depth: usize,
    pub leaves: usize,
    pub tree: String,
    pub rules: Vec<DecisionRule<ClusterId>>,
    pub ranking: AttributeRanking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAssignment {
    pub id: String,
    pub name: String,
    pub state: String,
    pub subset: String,
    pub cluster: ClusterId,
    pub exemplar_id: String,
    pub location: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Settings that produced the report (output directory left out).
    pub config: PipelineConfig,
    pub input_records: usize,
    pub kept_records: usize,
    pub removed: Vec<RemovedRecord>,
    pub subsets: Vec<SubsetReport>,
    pub explanations: Vec<Explanation>,
    pub profiles: Vec<ClusterProfile>,
    pub priorities: PriorityAssignment,
    pub assignments: Vec<RecordAssignment>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn has_coordinates(&self) -> bool {
        self.assignments.iter().any(|a| a.location.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// A finished run: the report plus wall-clock timings, which are kept out
/// of the report so that it stays reproducible.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Vec<StageTiming>,
    pub files: Vec<PathBuf>,
}

struct Timer {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: impl Into<String>) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Clustering of one subset.
#[derive(Debug, Clone)]
pub struct SubsetRun {
    pub report: SubsetReport,
    /// Cluster of each record, in subset order.
    pub labels: Vec<ClusterId>,
    /// Exemplar record id of each record.
    pub exemplar_ids: Vec<String>,
    /// Optional trace and matrix files, by file name.
    pub extra_files: Vec<(String, Vec<u8>)>,
}

fn file_tag(s: &str) -> String {
    let tag: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if tag.is_empty() {
        "subset".into()
    } else {
        tag
    }
}

fn trivial_result(n: usize, converged: bool) -> ClusterResult {
    ClusterResult {
        exemplars: if n == 0 { vec![] } else { vec![0] },
        labels: vec![0; n],
        iterations_run: 0,
        converged,
        net_similarity: 0.0,
    }
}

/// Gower matrix, similarity, then either a damping sweep or a single run at
/// the configured damping. Subsets with fewer than two records or no varying
/// attribute become a single cluster.
pub fn cluster_subset(config: &PipelineConfig, value: &str, d: &Dataset) -> Result<SubsetRun> {
    let active = active_attributes(d);
    let mut notes = Vec::new();
    let mut extra_files = Vec::new();
    let (result, sweep, damping, silhouette, per_point) = if d.len() < 2 || active.is_empty() {
        notes.push(format!(
            "{} record(s) with {} varying attribute(s); kept as a single cluster",
            d.len(),
            active.len()
        ));
        let damping = config.damping.unwrap_or(Damping::default().value());
        (
            trivial_result(d.len(), true),
            None,
            damping,
            0.0,
            config.per_point_silhouette.then_some(0.0),
        )
    } else {
        let encoded = data::encode_categorical(d);
        let dis = gower_matrix(d, &encoded, config.dice_mode)?;
        let sim = to_similarity(&dis, config.theta, &Preference::Median)?;
        if config.dump_matrices {
            let tag = file_tag(value);
            let mut buf = Vec::new();
            dis.matrix()
                .write_csv(&mut buf)
                .map_err(|e| Error::io("dissimilarity matrix", e))?;
            extra_files.push((format!("dissimilarity_{tag}.csv"), buf));
            let mut buf = Vec::new();
            sim.matrix()
                .write_csv(&mut buf)
                .map_err(|e| Error::io("similarity matrix", e))?;
            extra_files.push((format!("similarity_{tag}.csv"), buf));
        }
        let (result, sweep, damping) = match config.damping {
            Some(g) => (run_ap(&sim, &config.ap_params(Damping::new(g)?))?, None, g),
            None => {
                let (sweep, runs) = damping_sweep(
                    &sim,
                    &dis,
                    &config.damping_grid,
                    &config.ap_params(Damping::default()),
                )?;
                let best = sweep.best_index();
                let damping = sweep.best_damping;
                (
                    runs.into_iter().nth(best).expect("one run per grid value"),
                    Some(sweep),
                    damping,
                )
            }
        };
        if !result.converged {
            notes.push(format!(
                "affinity propagation did not converge within {} iterations at damping {damping}",
                config.max_iter
            ));
        }
        if config.trace {
            let mut rows = Vec::new();
            run_ap_traced(
                &sim,
                &config.ap_params(Damping::new(damping)?),
                Some(&mut rows),
            )?;
            let mut buf = Vec::new();
            crate::affinity::write_trace_csv(&rows, &mut buf)?;
            extra_files.push((format!("trace_{}.csv", file_tag(value)), buf));
        }
        let silhouette = silhouette_global(&dis, &result.labels)?;
        let per_point = if config.per_point_silhouette {
            Some(silhouette_per_point(&dis, &result.labels)?)
        } else {
            None
        };
        (result, sweep, damping, silhouette, per_point)
    };

    let labels: Vec<ClusterId> = result
        .cluster_ids()
        .into_iter()
        .map(|c| ClusterId::new(value, c))
        .collect();
    let exemplar_ids: Vec<String> = result
        .labels
        .iter()
        .map(|&e| d.records[e].id.clone())
        .collect();
    let report = SubsetReport {
        value: value.to_string(),
        records: d.len(),
        dropped_attributes: d.provenance.dropped_attributes.clone(),
        active_attributes: active
            .iter()
            .map(|&k| d.schema.get(k).name.clone())
            .collect(),
        sweep,
        damping,
        silhouette,
        per_point_silhouette: per_point,
        clusters: result.n_clusters(),
        converged: result.converged,
        iterations: result.iterations_run,
        net_similarity: result.net_similarity,
        exemplars: result
            .exemplars
            .iter()
            .map(|&e| d.records[e].id.clone())
            .collect(),
        cluster_sizes: result.cluster_sizes(),
        by_state: tabulate_by_state(value, &result, d)?,
        notes,
    };
    Ok(SubsetRun {
        report,
        labels,
        exemplar_ids,
        extra_files,
    })
}

/// Fits a tree on `d` against `labels` and collects its rules and ranking.
pub fn explain(
    scope: &str,
    d: &Dataset,
    labels: &[ClusterId],
    params: &TreeParams,
    root_attribute: Option<&str>,
) -> Result<Explanation> {
    let features = FeatureMatrix::from_dataset(d);
    let tree = match root_attribute {
        Some(attr) => build_tree_rooted(&features, labels, params, attr)?,
        None => build_tree(&features, labels, params)?,
    };
    Ok(Explanation {
        scope: scope.to_string(),
        accuracy: tree.accuracy(&features, labels),
        root_attribute: tree.root_attribute().map(str::to_string),
        depth: tree.root.depth(),
        leaves: tree.root.n_leaves(),
        tree: tree.to_text(),
        rules: extract_rules(&tree, &features, labels),
        ranking: rank_attributes(&tree),
    })
}

/// Loads the configured input with its schema.
pub fn load(config: &PipelineConfig) -> Result<Dataset> {
    load_dataset(&config.input, &config.schema_policy())
}

/// Ratio normalization and noise filtering with the configured attributes.
pub fn filter(config: &PipelineConfig, raw: &Dataset) -> Result<Dataset> {
    normalize_and_filter(raw, &config.count_attributes, &config.denominator)
}

/// Runs every stage and writes all artifacts to the configured output
/// directory (default `out`). On failure, whatever was computed is written
/// to a `quarantine` subdirectory along with the error.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut report = RunReport {
        config: PipelineConfig {
            output_dir: None,
            ..config.clone()
        },
        ..RunReport::default()
    };
    let mut extra_files = Vec::new();
    let mut timer = Timer::new();
    match run_stages(config, &mut report, &mut extra_files, &mut timer) {
        Ok(()) => {
            let mut files = write_report(&report, &out_dir).stage(PipelineStage::Write)?;
            for (name, bytes) in &extra_files {
                files.push(write_file(&out_dir, name, bytes).stage(PipelineStage::Write)?);
            }
            timer.lap("write");
            let timings = serde_json::to_string_pretty(&timer.timings).map_err(Error::from);
            let path =
                timings.and_then(|t| write_file(&out_dir, "timings.json", (t + "\n").as_bytes()));
            files.push(path.stage(PipelineStage::Write)?);
            Ok(RunOutput {
                report,
                timings: timer.timings,
                files,
            })
        }
        Err(e) => {
            if e.stage != PipelineStage::Config {
                let quarantine = out_dir.join("quarantine");
                let written = write_report(&report, &quarantine).and_then(|_| {
                    write_file(&quarantine, "error.txt", format!("{e}\n").as_bytes())
                });
                if let Err(w) = written {
                    log::warn!(
                        "could not write partial outputs to {}: {w}",
                        quarantine.display()
                    );
                }
            }
            Err(e)
        }
    }
}

fn run_stages(
    config: &PipelineConfig,
    report: &mut RunReport,
    extra_files: &mut Vec<(String, Vec<u8>)>,
    timer: &mut Timer,
) -> Result<(), PipelineError> {
    use PipelineStage as S;
    config.validate().stage(S::Config)?;
    let rules = match &config.rules_file {
        Some(path) => load_rules(path).stage(S::Config)?,
        None => default_rules(),
    };

    let raw = load(config).stage(S::Load)?;
    report.input_records = raw.provenance.input_records;
    timer.lap("load");

    let filtered = filter(config, &raw).stage(S::Filter)?;
    report.kept_records = filtered.len();
    report.removed = filtered.provenance.removed.clone();
    timer.lap("filter");

    let subsets = partition_by(&filtered, &config.partition_attribute).stage(S::Partition)?;
    let partition_k = filtered
        .schema
        .index_of(&config.partition_attribute)
        .expect("partition attribute was found");
    timer.lap("partition");

    let mut labels: Vec<Option<ClusterId>> = vec![None; filtered.len()];
    let mut exemplar_ids: Vec<String> = vec![String::new(); filtered.len()];
    let mut subset_labels = Vec::new();
    for (value, subset) in &subsets {
        let run = cluster_subset(config, value, subset).stage(S::Cluster)?;
        let rows = (0..filtered.len())
            .filter(|&i| filtered.value(i, partition_k).as_category() == Some(value));
        for ((i, label), exemplar) in rows.zip(&run.labels).zip(&run.exemplar_ids) {
            labels[i] = Some(label.clone());
            exemplar_ids[i] = exemplar.clone();
        }
        log::info!(
            "subset {value}: {} records, damping {}, {} clusters, silhouette {:.4}",
            subset.len(),
            run.report.damping,
            run.report.clusters,
            run.report.silhouette
        );
        extra_files.extend(run.extra_files);
        subset_labels.push(run.labels);
        report.subsets.push(run.report);
        timer.lap(format!("cluster {value}"));
    }
    let labels: Vec<ClusterId> = labels
        .into_iter()
        .map(|l| l.expect("every record is in a subset"))
        .collect();
    report.assignments = filtered
        .records
        .iter()
        .zip(&labels)
        .zip(&exemplar_ids)
        .map(|((r, l), e)| RecordAssignment {
            id: r.id.clone(),
            name: r.name.clone(),
            state: r.state.clone(),
            subset: l.subset.clone(),
            cluster: l.clone(),
            exemplar_id: e.clone(),
            location: r.location,
        })
        .collect();
    if !report.has_coordinates() {
        report
            .notes
            .push("records carry no coordinates; assignments.geojson not written".into());
    }

    if !filtered.is_empty() {
        match config.cart_mode {
            CartMode::Union => {
                let root = (config.root_on_partition && subsets.len() > 1)
                    .then_some(config.partition_attribute.as_str());
                report.explanations.push(
                    explain("all", &filtered, &labels, &config.tree, root).stage(S::Explain)?,
                );
            }
            CartMode::PerSubset => {
                for ((value, subset), l) in subsets.iter().zip(&subset_labels) {
                    report
                        .explanations
                        .push(explain(value, subset, l, &config.tree, None).stage(S::Explain)?);
                }
            }
        }
    }
    timer.lap("explain");

    report.profiles = profile_clusters(&filtered, &labels).stage(S::Prioritize)?;
    report.priorities = assign_priorities(&report.profiles, &rules).stage(S::Prioritize)?;
    for w in &report.priorities.warnings {
        log::warn!("{w}");
    }
    timer.lap("prioritize");
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("csv buffer", e.into_error()))
}

fn assignments_csv(report: &RunReport) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "record_id",
            "name",
            "state",
            "subset",
            "cluster",
            "exemplar_id",
        ],
        report.assignments.iter().map(|a| {
            vec![
                a.id.clone(),
                a.name.clone(),
                a.state.clone(),
                a.subset.clone(),
                a.cluster.to_string(),
                a.exemplar_id.clone(),
            ]
        }),
    )
}

fn states_csv(report: &RunReport) -> Result<Vec<u8>> {
    let states: BTreeSet<&str> = report
        .subsets
        .iter()
        .flat_map(|s| s.by_state.states.iter().map(String::as_str))
        .collect();
    let states: Vec<&str> = states.into_iter().collect();
    let mut header = vec!["subset", "cluster", "exemplar_id"];
    header.extend(&states);
    header.push("total");
    let mut rows = Vec::new();
    for subset in &report.subsets {
        let table = &subset.by_state;
        let spread = |counts: &[usize]| -> Vec<String> {
            states
                .iter()
                .map(|s| {
                    table
                        .states
                        .iter()
                        .position(|t| t == s)
                        .map_or(0, |p| counts[p])
                        .to_string()
                })
                .collect()
        };
        for row in &table.rows {
            let mut r = vec![
                subset.value.clone(),
                row.cluster.to_string(),
                row.exemplar.clone(),
            ];
            r.extend(spread(&row.counts));
            r.push(row.total.to_string());
            rows.push(r);
        }
        let mut r = vec![subset.value.clone(), "total".to_string(), String::new()];
        r.extend(spread(&table.totals));
        r.push(table.total.to_string());
        rows.push(r);
    }
    csv_bytes(&header, rows)
}

fn sweep_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for subset in &report.subsets {
        match &subset.sweep {
            Some(sweep) => {
                for e in &sweep.entries {
                    rows.push(vec![
                        subset.value.clone(),
                        e.damping.to_string(),
                        e.silhouette.to_string(),
                        e.clusters.to_string(),
                        e.converged.to_string(),
                        e.iterations.to_string(),
                        (e.damping == sweep.best_damping).to_string(),
                    ]);
                }
            }
            None => rows.push(vec![
                subset.value.clone(),
                subset.damping.to_string(),
                subset.silhouette.to_string(),
                subset.clusters.to_string(),
                subset.converged.to_string(),
                subset.iterations.to_string(),
                "true".to_string(),
            ]),
        }
    }
    csv_bytes(
        &[
            "subset",
            "damping",
            "silhouette",
            "clusters",
            "converged",
            "iterations",
            "selected",
        ],
        rows,
    )
}

fn rules_text(report: &RunReport) -> String {
    let mut out = String::new();
    for e in &report.explanations {
        let _ = writeln!(
            out,
            "# {} (accuracy {:.4}, depth {}, {} leaves)",
            e.scope, e.accuracy, e.depth, e.leaves
        );
        for rule in &e.rules {
            let _ = writeln!(out, "{rule}");
        }
        out.push('\n');
    }
    out
}

fn tree_text(report: &RunReport) -> String {
    report
        .explanations
        .iter()
        .map(|e| format!("# {}\n{}", e.scope, e.tree))
        .collect::<Vec<_>>()
        .join("\n")
}

fn importance_csv(report: &RunReport) -> Result<Vec<u8>> {
    csv_bytes(
        &["scope", "attribute", "importance", "best_depth"],
        report.explanations.iter().flat_map(|e| {
            e.ranking.entries.iter().map(|a| {
                vec![
                    e.scope.clone(),
                    a.attribute.clone(),
                    a.importance.to_string(),
                    a.best_depth.to_string(),
                ]
            })
        }),
    )
}

fn filter_csv(report: &RunReport) -> Result<Vec<u8>> {
    csv_bytes(
        &["record_id", "name", "state", "reason"],
        report.removed.iter().map(|r| {
            vec![
                r.id.clone(),
                r.name.clone(),
                r.state.clone(),
                r.reason.to_string(),
            ]
        }),
    )
}

fn geojson(report: &RunReport) -> Result<String> {
    let features: Vec<serde_json::Value> = report
        .assignments
        .iter()
        .filter_map(|a| {
            let (lat, lon) = a.location?;
            Some(serde_json::json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [lon, lat] },
                "properties": {
                    "id": a.id,
                    "name": a.name,
                    "state": a.state,
                    "subset": a.subset,
                    "cluster": a.cluster.to_string(),
                    "exemplar_id": a.exemplar_id,
                },
            }))
        })
        .collect();
    let collection = serde_json::json!({ "type": "FeatureCollection", "features": features });
    Ok(serde_json::to_string_pretty(&collection)? + "\n")
}

/// Writes the report artifacts into `out_dir` and returns their paths.
/// `assignments.geojson` is written only when records carry coordinates.
pub fn write_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut priorities = Vec::new();
    report.priorities.write_csv(&mut priorities)?;
    let rules_json = serde_json::to_string_pretty(
        &report
            .explanations
            .iter()
            .map(|e| serde_json::json!({ "scope": e.scope, "rules": e.rules }))
            .collect::<Vec<_>>(),
    )? + "\n";

    let mut artifacts: Vec<(&str, Vec<u8>)> = vec![
        ("assignments.csv", assignments_csv(report)?),
        ("clusters_by_state.csv", states_csv(report)?),
        ("sweep.csv", sweep_csv(report)?),
        ("rules.txt", rules_text(report).into_bytes()),
        ("rules.json", rules_json.into_bytes()),
        ("importance.csv", importance_csv(report)?),
        ("priorities.csv", priorities),
        ("report.json", report.to_json()?.into_bytes()),
        ("tree.txt", tree_text(report).into_bytes()),
        ("filter_report.csv", filter_csv(report)?),
    ];
    if report.has_coordinates() {
        artifacts.push(("assignments.geojson", geojson(report)?.into_bytes()));
    }
    artifacts
        .into_iter()
        .map(|(name, bytes)| write_file(out_dir, name, &bytes))
        .collect()
}
