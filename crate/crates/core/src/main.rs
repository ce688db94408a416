use std::collections::HashMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use colonia_cluster::affinity::ClusterId;
use colonia_cluster::data::{partition_by, Dataset};
use colonia_cluster::eval::write_sweep_csv;
use colonia_cluster::gower::DiceMode;
use colonia_cluster::pipeline::{self, CartMode, PipelineConfig, SchemaChoice};
use colonia_cluster::priority::{assign_priorities, default_rules, load_rules, profile_clusters};

/// Cluster colonias by water and wastewater access, explain the clusters
/// and rank them by priority.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full run: filter, partition, sweep, cluster, explain, prioritize.
    Pipeline(Options),
    /// Cluster one subset at a fixed damping and print its summary.
    Cluster {
        #[command(flatten)]
        options: Options,
        /// Partition value to cluster (all subsets if omitted).
        #[arg(long)]
        subset: Option<String>,
    },
    /// Print the damping sweep of each subset as CSV.
    Sweep {
        #[command(flatten)]
        options: Options,
        #[arg(long)]
        subset: Option<String>,
    },
    /// Fit a decision tree to existing cluster labels and print its rules.
    Explain {
        #[command(flatten)]
        options: Options,
        /// CSV with `record_id` and `cluster` columns, e.g. assignments.csv.
        #[arg(long)]
        labels: PathBuf,
        /// Print the rules as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Assign priority levels to existing cluster labels.
    Prioritize {
        #[command(flatten)]
        options: Options,
        #[arg(long)]
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliCartMode {
    Union,
    PerSubset,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliDiceMode {
    PerAttribute,
    Concatenated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliSchema {
    WaterAccess,
    Infer,
}

/// Flags overriding the configuration file.
#[derive(Args, Debug)]
struct Options {
    /// JSON configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, env = "COLONIA_CLUSTER_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    schema: Option<CliSchema>,
    /// Categorical attribute that splits the data before clustering.
    #[arg(long)]
    partition: Option<String>,
    /// Count attributes divided by the denominator (comma separated).
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<String>>,
    #[arg(long)]
    denominator: Option<String>,
    /// Negative scale turning dissimilarity into similarity.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Fixed damping in [0.5, 1); skips the sweep.
    #[arg(long)]
    damping: Option<f64>,
    /// Damping values to sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    stable_window: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    #[arg(long)]
    min_impurity_decrease: Option<f64>,
    #[arg(long, value_enum)]
    cart_mode: Option<CliCartMode>,
    /// Let the union tree choose its root split freely.
    #[arg(long)]
    free_root: bool,
    #[arg(long, value_enum)]
    dice_mode: Option<CliDiceMode>,
    /// Priority rules JSON file.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Write per-iteration traces.
    #[arg(long)]
    trace: bool,
    /// Write the dissimilarity and similarity matrices.
    #[arg(long)]
    dump_matrices: bool,
    /// Also compute the per-point silhouette.
    #[arg(long)]
    per_point_silhouette: bool,
}

/// Problems with flags, configuration or paths; these exit with status 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl Options {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.input {
            c.input = v.clone();
        }
        if let Some(v) = &self.out {
            c.output_dir = Some(v.clone());
        }
        if let Some(v) = self.schema {
            c.schema = match v {
                CliSchema::WaterAccess => SchemaChoice::WaterAccess,
                CliSchema::Infer => SchemaChoice::Infer,
            };
        }
        if let Some(v) = &self.partition {
            c.partition_attribute = v.clone();
        }
        if let Some(v) = &self.counts {
            c.count_attributes = v.clone();
        }
        if let Some(v) = &self.denominator {
            c.denominator = v.clone();
        }
        if let Some(v) = self.theta {
            c.theta = v;
        }
        if let Some(v) = self.damping {
            c.damping = Some(v);
        }
        if let Some(v) = &self.grid {
            c.damping_grid = v.clone();
        }
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = self.stable_window {
            c.stable_window = v;
        }
        if let Some(v) = self.max_depth {
            c.tree.max_depth = v;
        }
        if let Some(v) = self.min_samples_leaf {
            c.tree.min_samples_leaf = v;
        }
        if let Some(v) = self.min_impurity_decrease {
            c.tree.min_impurity_decrease = v;
        }
        if let Some(v) = self.cart_mode {
            c.cart_mode = match v {
                CliCartMode::Union => CartMode::Union,
                CliCartMode::PerSubset => CartMode::PerSubset,
            };
        }
        if self.free_root {
            c.root_on_partition = false;
        }
        if let Some(v) = self.dice_mode {
            c.dice_mode = match v {
                CliDiceMode::PerAttribute => DiceMode::PerAttribute,
                CliDiceMode::Concatenated => DiceMode::Concatenated,
            };
        }
        if let Some(v) = &self.rules {
            c.rules_file = Some(v.clone());
        }
        c.trace |= self.trace;
        c.dump_matrices |= self.dump_matrices;
        c.per_point_silhouette |= self.per_point_silhouette;
        c.validate()?;
        if !c.input.is_file() {
            bail!("input file '{}' does not exist", c.input.display());
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve(options: &Options) -> Result<PipelineConfig> {
    options.resolve().map_err(|e| UsageError(e).into())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    match cli.command {
        Command::Pipeline(options) => {
            let config = resolve(&options)?;
            let output = pipeline::run_pipeline(&config)?;
            let report = &output.report;
            println!(
                "{} records read, {} kept, {} removed",
                report.input_records,
                report.kept_records,
                report.removed.len()
            );
            for s in &report.subsets {
                println!(
                    "subset {}: {} records, damping {}, {} clusters, silhouette {:.4}",
                    s.value, s.records, s.damping, s.clusters, s.silhouette
                );
            }
            for e in &report.explanations {
                println!(
                    "tree {}: accuracy {:.4}, {} rules",
                    e.scope,
                    e.accuracy,
                    e.rules.len()
                );
            }
            if let Some(dir) = output.files.first().and_then(|p| p.parent()) {
                println!("wrote {} files to {}", output.files.len(), dir.display());
            }
        }
        Command::Cluster { options, subset } => {
            let mut config = resolve(&options)?;
            config
                .damping
                .get_or_insert(colonia_cluster::affinity::Damping::default().value());
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for (value, d) in subsets(&config, subset.as_deref())? {
                let run = pipeline::cluster_subset(&config, &value, &d)?;
                writeln!(out, "{}", serde_json::to_string_pretty(&run.report)?)?;
            }
        }
        Command::Sweep { options, subset } => {
            let mut config = resolve(&options)?;
            config.damping = None;
            let stdout = io::stdout();
            let mut out = stdout.lock();
            let mut first = true;
            for (value, d) in subsets(&config, subset.as_deref())? {
                let run = pipeline::cluster_subset(&config, &value, &d)?;
                let Some(sweep) = run.report.sweep else {
                    log::warn!("subset {value} is too small to sweep");
                    continue;
                };
                let mut buf = Vec::new();
                write_sweep_csv(Some(&value), &sweep, &mut buf)?;
                let text = String::from_utf8(buf)?;
                // One header for all subsets.
                let body = if first {
                    text.as_str()
                } else {
                    text.split_once('\n').map_or("", |(_, b)| b)
                };
                out.write_all(body.as_bytes())?;
                first = false;
            }
        }
        Command::Explain {
            options,
            labels,
            json,
        } => {
            let config = resolve(&options)?;
            let d = filtered(&config)?;
            let labels = read_labels(&labels, &d)?;
            let root = (config.cart_mode == CartMode::Union && config.root_on_partition)
                .then_some(config.partition_attribute.as_str())
                .filter(|attr| {
                    d.schema
                        .index_of(attr)
                        .is_some_and(|k| !d.is_constant(k) && d.schema.get(k).is_categorical())
                });
            let explanation = pipeline::explain("all", &d, &labels, &config.tree, root)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&explanation.rules)?);
            } else {
                println!("accuracy {:.4}", explanation.accuracy);
                for rule in &explanation.rules {
                    println!("{rule}");
                }
            }
        }
        Command::Prioritize { options, labels } => {
            let config = resolve(&options)?;
            let d = filtered(&config)?;
            let labels = read_labels(&labels, &d)?;
            let rules = match &config.rules_file {
                Some(path) => load_rules(path)?,
                None => default_rules(),
            };
            let profiles = profile_clusters(&d, &labels)?;
            let assignment = assign_priorities(&profiles, &rules)?;
            for w in &assignment.warnings {
                log::warn!("{w}");
            }
            assignment.write_csv(io::stdout().lock())?;
        }
    }
    Ok(())
}

fn filtered(config: &PipelineConfig) -> Result<Dataset> {
    let raw = pipeline::load(config)?;
    Ok(pipeline::filter(config, &raw)?)
}

fn subsets(config: &PipelineConfig, only: Option<&str>) -> Result<Vec<(String, Dataset)>> {
    let d = filtered(config)?;
    let parts = partition_by(&d, &config.partition_attribute)?;
    match only {
        None => Ok(parts.into_iter().collect()),
        Some(value) => {
            let (value, d) = parts
                .into_iter()
                .find(|(v, _)| v.eq_ignore_ascii_case(value))
                .ok_or_else(|| {
                    anyhow!("no subset with {} = {value}", config.partition_attribute)
                })?;
            Ok(vec![(value, d)])
        }
    }
}

/// Reads `record_id,cluster` pairs and lines them up with the records.
fn read_labels(path: &Path, d: &Dataset) -> Result<Vec<ClusterId>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read labels '{}'", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| anyhow!("labels file '{}' has no '{name}' column", path.display()))
    };
    let (id_col, cluster_col) = (column("record_id")?, column("cluster")?);
    let mut by_id = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let cluster: ClusterId = row[cluster_col].parse()?;
        by_id.insert(row[id_col].trim().to_string(), cluster);
    }
    d.records
        .iter()
        .map(|r| {
            by_id
                .get(&r.id)
                .cloned()
                .ok_or_else(|| anyhow!("record '{}' has no label in '{}'", r.id, path.display()))
        })
        .collect()
}
