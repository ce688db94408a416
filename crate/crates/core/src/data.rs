//! Record tables with mixed numeric/categorical attributes: loading,
//! ratio normalization with noise filtering, partitioning and one-hot
//! encoding.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute labels of the colonia water-access table.
pub const WATER_SOURCE: &str = "Water Source";
pub const WATER_HAULED: &str = "Water Hauled";
pub const PRIVATE_WELLS: &str = "Private Wells";
pub const PUBLIC_WATER_SERVICE: &str = "Public Water Service";
pub const SERVICE_ADEQUACY: &str = "Service Adequacy";
pub const WATER_HEALTH_HAZARD: &str = "Water Health Hazard";
pub const PUBLIC_SEWER: &str = "Served by Public Sewer";
pub const ESTIMATED_POPULATION: &str = "Estimated Population";
pub const PEOPLE_WITHOUT_WATER: &str = "People without Water";
pub const PEOPLE_WITHOUT_WASTEWATER: &str = "People without Wastewater";
pub const PEOPLE_WITH_WATER: &str = "People with Water";
pub const PEOPLE_WITH_WASTEWATER: &str = "People with Wastewater";

/// The four head counts that are divided by the population.
pub const COUNT_ATTRIBUTES: [&str; 4] = [
    PEOPLE_WITHOUT_WATER,
    PEOPLE_WITHOUT_WASTEWATER,
    PEOPLE_WITH_WATER,
    PEOPLE_WITH_WASTEWATER,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Numeric,
    Categorical,
}

/// Name and kind of one attribute in an explicit schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: KindSpec,
}

impl AttributeSpec {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: KindSpec::Numeric,
        }
    }

    pub fn categorical(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: KindSpec::Categorical,
        }
    }
}

/// The twelve attributes of the water-access table, in their canonical
/// order. Estimated Population is numeric because it is the denominator of
/// the ratio normalization.
pub fn water_access_schema() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::categorical(WATER_SOURCE),
        AttributeSpec::categorical(WATER_HAULED),
        AttributeSpec::categorical(PRIVATE_WELLS),
        AttributeSpec::categorical(PUBLIC_WATER_SERVICE),
        AttributeSpec::categorical(SERVICE_ADEQUACY),
        AttributeSpec::categorical(WATER_HEALTH_HAZARD),
        AttributeSpec::categorical(PUBLIC_SEWER),
        AttributeSpec::numeric(ESTIMATED_POPULATION),
        AttributeSpec::numeric(PEOPLE_WITHOUT_WATER),
        AttributeSpec::numeric(PEOPLE_WITHOUT_WASTEWATER),
        AttributeSpec::numeric(PEOPLE_WITH_WATER),
        AttributeSpec::numeric(PEOPLE_WITH_WASTEWATER),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    /// `min..=max` is the range R_k used by the normalized Manhattan term.
    /// Ratio attributes have the fixed range `[0, 1]`.
    Numeric { min: f64, max: f64, ratio: bool },
    /// Observed category tokens, sorted.
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttributeKind::Numeric { .. })
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, AttributeKind::Categorical { .. })
    }

    /// R_k for numeric attributes, `None` for categorical ones.
    pub fn range(&self) -> Option<f64> {
        match self.kind {
            AttributeKind::Numeric { min, max, .. } => Some(max - min),
            AttributeKind::Categorical { .. } => None,
        }
    }

    pub fn categories(&self) -> &[String] {
        match &self.kind {
            AttributeKind::Categorical { categories } => categories,
            AttributeKind::Numeric { .. } => &[],
        }
    }
}

/// Ordered attribute declarations with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for attr in &attributes {
            if !seen.insert(attr.name.trim().to_lowercase()) {
                return Err(Error::Schema(format!(
                    "duplicate attribute '{}'",
                    attr.name
                )));
            }
            if let AttributeKind::Numeric { min, max, .. } = attr.kind {
                if !(min <= max) {
                    return Err(Error::Schema(format!(
                        "attribute '{}' has range min {min} > max {max}",
                        attr.name
                    )));
                }
            }
        }
        Ok(Self { attributes })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn get(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    /// Case-insensitive, whitespace-trimmed lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let key = name.trim().to_lowercase();
        self.attributes
            .iter()
            .position(|a| a.name.trim().to_lowercase() == key)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("attribute '{name}' is not in the schema")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Category(s) => Some(s),
            Value::Number(_) => None,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Category(s) => f.write_str(s),
        }
    }
}

/// One community. `values` is aligned positionally with the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoniaRecord {
    pub id: String,
    pub name: String,
    pub state: String,
    pub county: String,
    pub values: Vec<Value>,
    /// (latitude, longitude) in degrees; carried through untouched.
    pub location: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RemovalReason {
    MissingValue { attribute: String },
    NonPositiveDenominator { attribute: String, value: f64 },
    RatioOutOfRange { attribute: String, ratio: f64 },
}

impl std::fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RemovalReason::MissingValue { attribute } => {
                write!(f, "missing value for '{attribute}'")
            }
            RemovalReason::NonPositiveDenominator { attribute, value } => {
                write!(f, "'{attribute}' is {value}, cannot normalize")
            }
            RemovalReason::RatioOutOfRange { attribute, ratio } => {
                write!(f, "normalized '{attribute}' is {ratio}, outside [0, 1]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedRecord {
    pub id: String,
    pub name: String,
    pub state: String,
    pub reason: RemovalReason,
}

impl RemovedRecord {
    fn new(record: &ColoniaRecord, reason: RemovalReason) -> Self {
        Self {
            id: record.id.clone(),
            name: record.name.clone(),
            state: record.state.clone(),
            reason,
        }
    }
}

/// What happened to the table on its way to this stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Rows read from the input file.
    pub input_records: usize,
    pub removed: Vec<RemovedRecord>,
    /// Attributes dropped because they were constant within a partition.
    pub dropped_attributes: Vec<String>,
    /// Attribute/value pair that selected this partition, if any.
    pub partition: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub records: Vec<ColoniaRecord>,
    pub stage: Stage,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, record: usize, attribute: usize) -> &Value {
        &self.records[record].values[attribute]
    }

    /// Whether every record holds the same value for `attribute`.
    pub fn is_constant(&self, attribute: usize) -> bool {
        let mut values = self.records.iter().map(|r| &r.values[attribute]);
        match values.next() {
            None => true,
            Some(first) => values.all(|v| v == first),
        }
    }

    /// Keeps only the listed records (by index, in the given order),
    /// leaving the schema untouched.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            stage: self.stage,
            provenance: self.provenance.clone(),
        }
    }
}

/// How the attribute columns of an input file are determined.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaPolicy {
    Explicit(Vec<AttributeSpec>),
    InferFromHeader,
}

const ID_COLUMNS: &[&str] = &["id", "colonia id", "colonia_id", "objectid"];
const NAME_COLUMNS: &[&str] = &["name", "colonia name", "colonia_name", "colonia"];
const STATE_COLUMNS: &[&str] = &["state"];
const COUNTY_COLUMNS: &[&str] = &["county"];
const LAT_COLUMNS: &[&str] = &["latitude", "lat"];
const LON_COLUMNS: &[&str] = &["longitude", "lon", "lng", "long"];

fn normalize_header(h: &str) -> String {
    h.trim().to_lowercase()
}

fn find_column(headers: &[String], aliases: &[&str]) -> Option<usize> {
    aliases
        .iter()
        .find_map(|alias| headers.iter().position(|h| h == alias))
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token.eq_ignore_ascii_case("na") || token.eq_ignore_ascii_case("n/a")
}

/// Maps yes/no style answers onto `Y`, `N` and `Partial`; every other token
/// is returned trimmed.
pub fn canonical_token(token: &str) -> String {
    let t = token.trim();
    match t.to_ascii_lowercase().as_str() {
        "y" | "yes" => "Y".to_string(),
        "n" | "no" => "N".to_string(),
        "partial" => "Partial".to_string(),
        _ => t.to_string(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, policy: &SchemaPolicy) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, policy)
}

/// Reads a UTF-8 CSV table with a header row. Rows missing any attribute
/// value are excluded and listed in the provenance; numeric ranges and
/// category sets are taken from the kept rows.
pub fn read_dataset<R: Read>(reader: R, policy: &SchemaPolicy) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(normalize_header).collect();
    let rows: Vec<csv::StringRecord> = csv.records().collect::<std::result::Result<_, _>>()?;

    let id_col = find_column(&headers, ID_COLUMNS);
    let name_col = find_column(&headers, NAME_COLUMNS);
    let state_col = find_column(&headers, STATE_COLUMNS);
    let county_col = find_column(&headers, COUNTY_COLUMNS);
    let lat_col = find_column(&headers, LAT_COLUMNS);
    let lon_col = find_column(&headers, LON_COLUMNS);
    let meta: Vec<usize> = [id_col, name_col, state_col, county_col, lat_col, lon_col]
        .into_iter()
        .flatten()
        .collect();

    // (column index, attribute name, numeric?)
    let columns: Vec<(usize, String, bool)> = match policy {
        SchemaPolicy::Explicit(specs) => {
            let mut cols = Vec::with_capacity(specs.len());
            for spec in specs {
                let key = normalize_header(&spec.name);
                let col = headers.iter().position(|h| *h == key).ok_or_else(|| {
                    Error::Schema(format!("input has no column for attribute '{}'", spec.name))
                })?;
                cols.push((col, spec.name.clone(), spec.kind == KindSpec::Numeric));
            }
            cols
        }
        SchemaPolicy::InferFromHeader => {
            let raw_headers = csv.headers()?.clone();
            (0..headers.len())
                .filter(|c| !meta.contains(c))
                .map(|c| {
                    let mut seen = false;
                    let numeric = rows.iter().all(|row| {
                        let token = row.get(c).unwrap_or("");
                        if is_missing(token) {
                            true
                        } else {
                            seen = true;
                            token.parse::<f64>().is_ok()
                        }
                    });
                    (c, raw_headers[c].trim().to_string(), numeric && seen)
                })
                .collect()
        }
    };

    let mut records = Vec::with_capacity(rows.len());
    let mut removed = Vec::new();
    for (row_index, row) in rows.iter().enumerate() {
        let cell = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("").to_string();
        let id = match id_col {
            Some(c) => row.get(c).unwrap_or("").to_string(),
            None => format!("{}", row_index + 1),
        };
        let location = match (lat_col, lon_col) {
            (Some(la), Some(lo)) => {
                match (
                    row.get(la).and_then(|t| t.parse::<f64>().ok()),
                    row.get(lo).and_then(|t| t.parse::<f64>().ok()),
                ) {
                    (Some(lat), Some(lon)) if lat.is_finite() && lon.is_finite() => {
                        Some((lat, lon))
                    }
                    _ => None,
                }
            }
            _ => None,
        };
        let mut record = ColoniaRecord {
            id,
            name: cell(name_col),
            state: cell(state_col),
            county: cell(county_col),
            values: Vec::with_capacity(columns.len()),
            location,
        };

        let mut missing = None;
        for (col, name, numeric) in &columns {
            let token = row.get(*col).unwrap_or("");
            if is_missing(token) {
                missing.get_or_insert_with(|| name.clone());
                record.values.push(Value::Category(String::new()));
                continue;
            }
            if *numeric {
                let v: f64 = token.parse().map_err(|_| Error::Parse {
                    row: row_index + 1,
                    column: name.clone(),
                    token: token.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: row_index + 1,
                        column: name.clone(),
                        token: token.to_string(),
                    });
                }
                record.values.push(Value::Number(v));
            } else {
                record.values.push(Value::Category(canonical_token(token)));
            }
        }
        match missing {
            Some(attribute) => removed.push(RemovedRecord::new(
                &record,
                RemovalReason::MissingValue { attribute },
            )),
            None => records.push(record),
        }
    }

    let attributes = columns
        .iter()
        .map(|(_, name, numeric)| Attribute {
            name: name.clone(),
            kind: if *numeric {
                AttributeKind::Numeric {
                    min: 0.0,
                    max: 0.0,
                    ratio: false,
                }
            } else {
                AttributeKind::Categorical {
                    categories: Vec::new(),
                }
            },
        })
        .collect();
    let schema = observed_schema(&AttributeSchema::new(attributes)?, &records);
    Ok(Dataset {
        schema,
        records,
        stage: Stage::Raw,
        provenance: Provenance {
            input_records: rows.len(),
            removed,
            ..Provenance::default()
        },
    })
}

/// Recomputes non-ratio numeric ranges and category sets from `records`.
fn observed_schema(schema: &AttributeSchema, records: &[ColoniaRecord]) -> AttributeSchema {
    let attributes = schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(k, attr)| {
            let kind = match &attr.kind {
                AttributeKind::Numeric { ratio: true, .. } => AttributeKind::Numeric {
                    min: 0.0,
                    max: 1.0,
                    ratio: true,
                },
                AttributeKind::Numeric { ratio: false, .. } => {
                    let (min, max) = records
                        .iter()
                        .filter_map(|r| r.values[k].as_number())
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v), hi.max(v))
                        });
                    if min > max {
                        AttributeKind::Numeric {
                            min: 0.0,
                            max: 0.0,
                            ratio: false,
                        }
                    } else {
                        AttributeKind::Numeric {
                            min,
                            max,
                            ratio: false,
                        }
                    }
                }
                AttributeKind::Categorical { .. } => {
                    let set: BTreeSet<&str> = records
                        .iter()
                        .filter_map(|r| r.values[k].as_category())
                        .collect();
                    AttributeKind::Categorical {
                        categories: set.into_iter().map(str::to_string).collect(),
                    }
                }
            };
            Attribute {
                name: attr.name.clone(),
                kind,
            }
        })
        .collect();
    AttributeSchema { attributes }
}

fn require_numeric(schema: &AttributeSchema, name: &str) -> Result<usize> {
    let k = schema.require(name)?;
    if !schema.get(k).is_numeric() {
        return Err(Error::Schema(format!("attribute '{name}' must be numeric")));
    }
    Ok(k)
}

/// Replaces each count attribute by `count / denominator` and drops rows
/// whose denominator is not positive or whose ratios leave `[0, 1]`.
///
/// A dataset that is already filtered is returned unchanged.
pub fn normalize_and_filter<S: AsRef<str>>(
    d: &Dataset,
    count_attrs: &[S],
    denominator_attr: &str,
) -> Result<Dataset> {
    let denom = require_numeric(&d.schema, denominator_attr)?;
    let counts = count_attrs
        .iter()
        .map(|name| require_numeric(&d.schema, name.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    if counts.contains(&denom) {
        return Err(Error::Schema(format!(
            "'{denominator_attr}' cannot be both a count and the denominator"
        )));
    }
    if d.stage == Stage::Filtered {
        return Ok(d.clone());
    }

    let mut kept = Vec::with_capacity(d.records.len());
    let mut removed = d.provenance.removed.clone();
    'records: for record in &d.records {
        let population = record.values[denom].as_number().unwrap_or(f64::NAN);
        if !(population > 0.0) {
            removed.push(RemovedRecord::new(
                record,
                RemovalReason::NonPositiveDenominator {
                    attribute: d.schema.get(denom).name.clone(),
                    value: population,
                },
            ));
            continue;
        }
        let mut normalized = record.clone();
        for &k in &counts {
            let ratio = record.values[k].as_number().unwrap_or(f64::NAN) / population;
            if !(0.0..=1.0).contains(&ratio) {
                removed.push(RemovedRecord::new(
                    record,
                    RemovalReason::RatioOutOfRange {
                        attribute: d.schema.get(k).name.clone(),
                        ratio,
                    },
                ));
                continue 'records;
            }
            normalized.values[k] = Value::Number(ratio);
        }
        kept.push(normalized);
    }

    let mut attributes = d.schema.attributes().to_vec();
    for &k in &counts {
        attributes[k].kind = AttributeKind::Numeric {
            min: 0.0,
            max: 1.0,
            ratio: true,
        };
    }
    let schema = observed_schema(&AttributeSchema { attributes }, &kept);
    Ok(Dataset {
        schema,
        records: kept,
        stage: Stage::Filtered,
        provenance: Provenance {
            removed,
            ..d.provenance.clone()
        },
    })
}

/// Splits the dataset on a categorical attribute. Each subset's schema is
/// recomputed from its own records and drops attributes that are constant
/// within it, including the partition attribute itself.
pub fn partition_by(d: &Dataset, attr: &str) -> Result<BTreeMap<String, Dataset>> {
    let k = d.schema.require(attr)?;
    if !d.schema.get(k).is_categorical() {
        return Err(Error::Schema(format!(
            "partition attribute '{attr}' must be categorical"
        )));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, record) in d.records.iter().enumerate() {
        let key = record.values[k]
            .as_category()
            .unwrap_or_default()
            .to_string();
        groups.entry(key).or_default().push(i);
    }

    let mut subsets = BTreeMap::new();
    for (value, indices) in groups {
        let mut subset = d.select(&indices);
        let keep: Vec<usize> = (0..d.schema.len())
            .filter(|&a| !subset.is_constant(a))
            .collect();
        let dropped: Vec<String> = (0..d.schema.len())
            .filter(|a| !keep.contains(a))
            .map(|a| d.schema.get(a).name.clone())
            .collect();
        for record in &mut subset.records {
            record.values = keep.iter().map(|&a| record.values[a].clone()).collect();
        }
        let attributes = keep.iter().map(|&a| d.schema.get(a).clone()).collect();
        subset.schema = observed_schema(&AttributeSchema { attributes }, &subset.records);
        subset.provenance.dropped_attributes = dropped;
        subset.provenance.partition = Some((d.schema.get(k).name.clone(), value.clone()));
        subsets.insert(value, subset);
    }
    Ok(subsets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyColumn {
    /// `<attribute>_<category>`
    pub name: String,
    pub attribute: String,
    pub category: String,
}

/// Dummy columns derived from one categorical source attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyGroup {
    pub attribute: String,
    /// Index of the source attribute in the dataset schema.
    pub attribute_index: usize,
    pub start: usize,
    pub len: usize,
}

/// One-hot encoding of every categorical attribute, grouped by source.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub columns: Vec<DummyColumn>,
    pub groups: Vec<DummyGroup>,
    n_rows: usize,
    data: Vec<u8>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Dummy vector of record `i` for group `g`.
    pub fn group_slice(&self, i: usize, g: usize) -> &[u8] {
        let group = &self.groups[g];
        &self.row(i)[group.start..group.start + group.len]
    }

    pub fn group_of(&self, attribute_index: usize) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.attribute_index == attribute_index)
    }

    /// Recovers the categorical tokens of record `i`, one per group.
    pub fn decode_row(&self, i: usize) -> Vec<Option<String>> {
        (0..self.groups.len())
            .map(|g| {
                let start = self.groups[g].start;
                self.group_slice(i, g)
                    .iter()
                    .position(|&b| b == 1)
                    .map(|p| self.columns[start + p].category.clone())
            })
            .collect()
    }
}

pub fn encode_categorical(d: &Dataset) -> EncodedMatrix {
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    for (k, attr) in d.schema.attributes().iter().enumerate() {
        if let AttributeKind::Categorical { categories } = &attr.kind {
            groups.push(DummyGroup {
                attribute: attr.name.clone(),
                attribute_index: k,
                start: columns.len(),
                len: categories.len(),
            });
            columns.extend(categories.iter().map(|c| DummyColumn {
                name: format!("{}_{}", attr.name, c),
                attribute: attr.name.clone(),
                category: c.clone(),
            }));
        }
    }

    let width = columns.len();
    let mut data = vec![0u8; width * d.len()];
    for (i, record) in d.records.iter().enumerate() {
        let row = &mut data[i * width..(i + 1) * width];
        for group in &groups {
            let token = record.values[group.attribute_index]
                .as_category()
                .unwrap_or_default();
            if let Some(p) = d
                .schema
                .get(group.attribute_index)
                .categories()
                .iter()
                .position(|c| c == token)
            {
                row[group.start + p] = 1;
            }
        }
    }
    EncodedMatrix {
        columns,
        groups,
        n_rows: d.len(),
        data,
    }
}
