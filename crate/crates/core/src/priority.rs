//! Cluster profiles and rule-based priority levels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::ClusterId;
use crate::data::{AttributeKind, Dataset};
use crate::error::{Error, Result};

/// The rules file shipped with the crate.
pub const DEFAULT_RULES_JSON: &str = include_str!("../rules/default_rules.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSummary {
    pub modal: String,
    /// Share of the cluster holding the modal value.
    pub frequency: f64,
    /// Share of the cluster holding each observed value.
    pub frequencies: BTreeMap<String, f64>,
}

/// Dominant attribute values of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: ClusterId,
    pub size: usize,
    pub categorical: BTreeMap<String, CategoricalSummary>,
    pub numeric: BTreeMap<String, f64>,
}

/// One profile per non-empty cluster, ordered by cluster id. Modal ties go
/// to the lexicographically smallest value.
pub fn profile_clusters(d: &Dataset, labels: &[ClusterId]) -> Result<Vec<ClusterProfile>> {
    if labels.len() != d.len() {
        return Err(Error::Input(format!(
            "{} labels for {} records",
            labels.len(),
            d.len()
        )));
    }
    let mut members: BTreeMap<&ClusterId, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let profiles = members
        .into_iter()
        .map(|(cluster, rows)| {
            let size = rows.len();
            let mut categorical = BTreeMap::new();
            let mut numeric = BTreeMap::new();
            for (k, attr) in d.schema.attributes().iter().enumerate() {
                match attr.kind {
                    AttributeKind::Numeric { .. } => {
                        let sum: f64 = rows.iter().filter_map(|&i| d.value(i, k).as_number()).sum();
                        numeric.insert(attr.name.clone(), sum / size as f64);
                    }
                    AttributeKind::Categorical { .. } => {
                        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                        for &i in &rows {
                            if let Some(c) = d.value(i, k).as_category() {
                                *counts.entry(c.to_string()).or_default() += 1;
                            }
                        }
                        // BTreeMap iterates in key order, so `>` keeps the smallest tied key.
                        let mut modal: Option<(&String, usize)> = None;
                        for (c, &n) in &counts {
                            if modal.is_none_or(|(_, m)| n > m) {
                                modal = Some((c, n));
                            }
                        }
                        let Some((modal, modal_count)) = modal else {
                            continue;
                        };
                        let summary = CategoricalSummary {
                            modal: modal.clone(),
                            frequency: modal_count as f64 / size as f64,
                            frequencies: counts
                                .iter()
                                .map(|(c, &n)| (c.clone(), n as f64 / size as f64))
                                .collect(),
                        };
                        categorical.insert(attr.name.clone(), summary);
                    }
                }
            }
            ClusterProfile {
                cluster: cluster.clone(),
                size,
                categorical,
                numeric,
            }
        })
        .collect();
    Ok(profiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileOp {
    /// Modal value equals `value`.
    Eq,
    /// Modal value differs from `value`.
    Ne,
    /// Share of `category` (or of the modal value) exceeds `value`.
    FreqGt,
    MeanLt,
    MeanGt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for RuleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleValue::Number(v) => write!(f, "{v}"),
            RuleValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCondition {
    pub attribute: String,
    pub op: ProfileOp,
    pub value: RuleValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl fmt::Display for ProfileCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            ProfileOp::Eq => write!(f, "{} = {}", self.attribute, self.value),
            ProfileOp::Ne => write!(f, "{} != {}", self.attribute, self.value),
            ProfileOp::FreqGt => match &self.category {
                Some(c) => write!(f, "share of {} = {} > {}", self.attribute, c, self.value),
                None => write!(f, "modal share of {} > {}", self.attribute, self.value),
            },
            ProfileOp::MeanLt => write!(f, "mean {} < {}", self.attribute, self.value),
            ProfileOp::MeanGt => write!(f, "mean {} > {}", self.attribute, self.value),
        }
    }
}

/// Boolean combination of profile conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predicate {
    All { all: Vec<Predicate> },
    Any { any: Vec<Predicate> },
    Not { not: Box<Predicate> },
    Condition(ProfileCondition),
}

impl Predicate {
    fn conditions<'p>(&'p self, out: &mut Vec<&'p ProfileCondition>) {
        match self {
            Predicate::All { all: ps } | Predicate::Any { any: ps } => {
                ps.iter().for_each(|p| p.conditions(out))
            }
            Predicate::Not { not } => not.conditions(out),
            Predicate::Condition(c) => out.push(c),
        }
    }

    /// Evaluates against a profile; on success `basis` receives the facts
    /// that made it true.
    fn eval(&self, profile: &ClusterProfile, basis: &mut Vec<String>) -> Result<bool> {
        match self {
            Predicate::All { all } => {
                let mut facts = Vec::new();
                for p in all {
                    if !p.eval(profile, &mut facts)? {
                        return Ok(false);
                    }
                }
                basis.extend(facts);
                Ok(true)
            }
            Predicate::Any { any } => {
                for p in any {
                    let mut facts = Vec::new();
                    if p.eval(profile, &mut facts)? {
                        basis.extend(facts);
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Predicate::Not { not } => {
                let held = not.eval(profile, &mut Vec::new())?;
                if !held {
                    basis.push(format!("not ({})", not.describe()));
                }
                Ok(!held)
            }
            Predicate::Condition(c) => {
                let fact = eval_condition(c, profile)?;
                let held = fact.is_some();
                basis.extend(fact);
                Ok(held)
            }
        }
    }

    pub fn describe(&self) -> String {
        let join = |ps: &[Predicate], sep: &str| {
            ps.iter()
                .map(|p| match p {
                    Predicate::Condition(_) | Predicate::Not { .. } => p.describe(),
                    _ => format!("({})", p.describe()),
                })
                .collect::<Vec<_>>()
                .join(sep)
        };
        match self {
            Predicate::All { all } => join(all, " AND "),
            Predicate::Any { any } => join(any, " OR "),
            Predicate::Not { not } => format!("NOT ({})", not.describe()),
            Predicate::Condition(c) => c.to_string(),
        }
    }
}

fn number(c: &ProfileCondition) -> Result<f64> {
    match c.value {
        RuleValue::Number(v) => Ok(v),
        RuleValue::Text(_) => Err(Error::Config(format!(
            "condition '{c}' needs a numeric value"
        ))),
    }
}

/// `Some(fact)` when the condition holds.
fn eval_condition(c: &ProfileCondition, profile: &ClusterProfile) -> Result<Option<String>> {
    let categorical = profile.categorical.get(&c.attribute);
    let numeric = profile.numeric.get(&c.attribute);
    if categorical.is_none() && numeric.is_none() {
        return Err(Error::Config(format!(
            "rule attribute '{}' is not in the profile of cluster {}",
            c.attribute, profile.cluster
        )));
    }
    let need_categorical = || {
        categorical
            .ok_or_else(|| Error::Config(format!("condition '{c}' needs a categorical attribute")))
    };
    let need_numeric = || {
        numeric
            .copied()
            .ok_or_else(|| Error::Config(format!("condition '{c}' needs a numeric attribute")))
    };
    let fact = match c.op {
        ProfileOp::Eq | ProfileOp::Ne => {
            let summary = need_categorical()?;
            let target = c.value.to_string();
            let equal = summary.modal == target;
            (equal == (c.op == ProfileOp::Eq)).then(|| {
                format!(
                    "{} modal {} ({:.0}%)",
                    c.attribute,
                    summary.modal,
                    summary.frequency * 100.0
                )
            })
        }
        ProfileOp::FreqGt => {
            let summary = need_categorical()?;
            let threshold = number(c)?;
            let (category, share) = match &c.category {
                Some(cat) => (
                    cat.as_str(),
                    summary.frequencies.get(cat).copied().unwrap_or(0.0),
                ),
                None => (summary.modal.as_str(), summary.frequency),
            };
            (share > threshold).then(|| {
                format!(
                    "{} = {category} in {:.0}% of records",
                    c.attribute,
                    share * 100.0
                )
            })
        }
        ProfileOp::MeanLt | ProfileOp::MeanGt => {
            let mean = need_numeric()?;
            let threshold = number(c)?;
            let held = if c.op == ProfileOp::MeanLt {
                mean < threshold
            } else {
                mean > threshold
            };
            held.then(|| format!("mean {} = {mean}", c.attribute))
        }
    };
    Ok(fact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityRule {
    pub priority: u8,
    pub description: String,
    pub predicate: Predicate,
}

/// Checks that levels 1 to 5 each appear exactly once and returns the rules
/// in ascending level order.
pub fn validate_rules(mut rules: Vec<PriorityRule>) -> Result<Vec<PriorityRule>> {
    rules.sort_by_key(|r| r.priority);
    let levels: Vec<u8> = rules.iter().map(|r| r.priority).collect();
    if levels != [1, 2, 3, 4, 5] {
        return Err(Error::Config(format!(
            "priority levels must be 1 to 5, each exactly once; got {levels:?}"
        )));
    }
    for rule in &rules {
        let mut conditions = Vec::new();
        rule.predicate.conditions(&mut conditions);
        if conditions.is_empty() {
            return Err(Error::Config(format!(
                "priority {} has no conditions",
                rule.priority
            )));
        }
        for c in conditions {
            match (c.op, &c.value) {
                (ProfileOp::FreqGt | ProfileOp::MeanLt | ProfileOp::MeanGt, RuleValue::Text(_)) => {
                    return Err(Error::Config(format!(
                        "condition '{c}' needs a numeric value"
                    )));
                }
                _ => {}
            }
        }
    }
    Ok(rules)
}

pub fn parse_rules(json: &str) -> Result<Vec<PriorityRule>> {
    validate_rules(serde_json::from_str(json)?)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<PriorityRule>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rules(&text)
}

pub fn default_rules() -> Vec<PriorityRule> {
    parse_rules(DEFAULT_RULES_JSON).expect("bundled rules are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub cluster: ClusterId,
    pub priority: u8,
    /// Description of the rule that fired.
    pub rule: String,
    /// Profile facts that made the rule fire.
    pub basis: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorityAssignment {
    pub entries: Vec<PriorityEntry>,
    pub warnings: Vec<String>,
}

impl PriorityAssignment {
    pub fn get(&self, cluster: &ClusterId) -> Option<&PriorityEntry> {
        self.entries.iter().find(|e| &e.cluster == cluster)
    }

    /// `cluster,priority,rule` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster", "priority", "rule", "basis"])?;
        for e in &self.entries {
            w.write_record([
                e.cluster.to_string(),
                e.priority.to_string(),
                e.rule.clone(),
                e.basis.join("; "),
            ])?;
        }
        w.flush().map_err(|e| Error::io("priorities", e))?;
        Ok(())
    }
}

/// Gives each profile the level of the first rule (most urgent first) whose
/// predicate holds. A profile no rule matches gets level 5 and a warning, as
/// does any level that no cluster reaches.
pub fn assign_priorities(
    profiles: &[ClusterProfile],
    rules: &[PriorityRule],
) -> Result<PriorityAssignment> {
    let rules = validate_rules(rules.to_vec())?;
    let mut assignment = PriorityAssignment::default();
    for profile in profiles {
        let mut entry = None;
        for rule in &rules {
            let mut basis = Vec::new();
            if rule.predicate.eval(profile, &mut basis)? {
                entry = Some(PriorityEntry {
                    cluster: profile.cluster.clone(),
                    priority: rule.priority,
                    rule: rule.description.clone(),
                    basis,
                });
                break;
            }
        }
        let entry = entry.unwrap_or_else(|| {
            assignment.warnings.push(format!(
                "cluster {} matched no rule; assigned priority 5",
                profile.cluster
            ));
            PriorityEntry {
                cluster: profile.cluster.clone(),
                priority: 5,
                rule: "no rule matched".into(),
                basis: Vec::new(),
            }
        });
        assignment.entries.push(entry);
    }
    if !profiles.is_empty() {
        for rule in &rules {
            if !assignment
                .entries
                .iter()
                .any(|e| e.priority == rule.priority && e.rule == rule.description)
            {
                assignment.warnings.push(format!(
                    "priority {} ({}) matched no cluster",
                    rule.priority, rule.description
                ));
            }
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        read_dataset, SchemaPolicy, ESTIMATED_POPULATION, PRIVATE_WELLS, PUBLIC_SEWER,
        PUBLIC_WATER_SERVICE, SERVICE_ADEQUACY, WATER_HAULED, WATER_HEALTH_HAZARD,
    };

    fn profile(categorical: &[(&str, &str)], population: f64) -> ClusterProfile {
        ClusterProfile {
            cluster: ClusterId::new("t", 0),
            size: 10,
            categorical: categorical
                .iter()
                .map(|(a, v)| {
                    let summary = CategoricalSummary {
                        modal: v.to_string(),
                        frequency: 1.0,
                        frequencies: [(v.to_string(), 1.0)].into(),
                    };
                    (a.to_string(), summary)
                })
                .collect(),
            numeric: [(ESTIMATED_POPULATION.to_string(), population)].into(),
        }
    }

    #[test]
    fn modal_value_and_frequency() {
        let csv = "name,state,Hazard,Pop\na,TX,Y,1\nb,TX,Y,2\nc,TX,N,6\n";
        let d = read_dataset(csv.as_bytes(), &SchemaPolicy::InferFromHeader).unwrap();
        let profiles = profile_clusters(&d, &vec![ClusterId::new("", 0); 3]).unwrap();
        assert_eq!(profiles.len(), 1);
        let hazard = &profiles[0].categorical["Hazard"];
        assert_eq!(hazard.modal, "Y");
        assert!((hazard.frequency - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(profiles[0].numeric["Pop"], 3.0);
        assert_eq!(profiles[0].size, 3);
    }

    #[test]
    fn modal_ties_break_lexicographically() {
        let csv = "name,state,Hazard\na,TX,Y\nb,TX,N\n";
        let d = read_dataset(csv.as_bytes(), &SchemaPolicy::InferFromHeader).unwrap();
        let profiles = profile_clusters(&d, &vec![ClusterId::new("", 0); 2]).unwrap();
        assert_eq!(profiles[0].categorical["Hazard"].modal, "N");
    }

    #[test]
    fn empty_labels_give_no_profiles() {
        let d = read_dataset(
            "name,state,Hazard\n".as_bytes(),
            &SchemaPolicy::InferFromHeader,
        )
        .unwrap();
        assert!(profile_clusters(&d, &[]).unwrap().is_empty());
    }

    #[test]
    fn hauled_water_is_priority_one() {
        let p = profile(
            &[
                (WATER_HAULED, "Y"),
                (PUBLIC_WATER_SERVICE, "N"),
                (PRIVATE_WELLS, "N"),
                (SERVICE_ADEQUACY, "N"),
                (WATER_HEALTH_HAZARD, "N"),
                (PUBLIC_SEWER, "N"),
            ],
            120.0,
        );
        let a = assign_priorities(&[p], &default_rules()).unwrap();
        assert_eq!(a.entries[0].priority, 1);
        assert!(a.entries[0].basis.iter().any(|b| b.contains(WATER_HAULED)));
    }

    #[test]
    fn no_public_water_without_hazard_is_priority_two() {
        let p = profile(
            &[
                (WATER_HAULED, "N"),
                (PUBLIC_WATER_SERVICE, "N"),
                (PRIVATE_WELLS, "Y"),
                (SERVICE_ADEQUACY, "N"),
                (WATER_HEALTH_HAZARD, "N"),
                (PUBLIC_SEWER, "N"),
            ],
            300.0,
        );
        let a = assign_priorities(&[p], &default_rules()).unwrap();
        assert_eq!(a.entries[0].priority, 2);
    }

    #[test]
    fn full_service_is_priority_four() {
        let p = profile(
            &[
                (WATER_HAULED, "N"),
                (PUBLIC_WATER_SERVICE, "Y"),
                (PRIVATE_WELLS, "N"),
                (SERVICE_ADEQUACY, "Y"),
                (WATER_HEALTH_HAZARD, "N"),
                (PUBLIC_SEWER, "Y"),
            ],
            800.0,
        );
        let a = assign_priorities(&[p], &default_rules()).unwrap();
        assert_eq!(a.entries[0].priority, 4);
    }

    #[test]
    fn hazard_share_alone_triggers_priority_one() {
        let mut p = profile(
            &[
                (WATER_HAULED, "N"),
                (PUBLIC_WATER_SERVICE, "Y"),
                (SERVICE_ADEQUACY, "Y"),
                (WATER_HEALTH_HAZARD, "N"),
                (PUBLIC_SEWER, "N"),
            ],
            50.0,
        );
        let hazard = p.categorical.get_mut(WATER_HEALTH_HAZARD).unwrap();
        hazard.frequency = 0.8;
        hazard.frequencies = [("N".into(), 0.8), ("Y".into(), 0.2)].into();
        assert_eq!(
            assign_priorities(&[p], &default_rules()).unwrap().entries[0].priority,
            1
        );
    }

    #[test]
    fn unknown_rule_attribute_is_a_config_error() {
        let p = profile(&[(WATER_HAULED, "Y")], 1.0);
        assert!(matches!(
            assign_priorities(&[p], &default_rules()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn levels_must_be_complete_and_unique() {
        let mut rules = default_rules();
        rules.pop();
        assert!(validate_rules(rules.clone()).is_err());
        rules.push(rules[0].clone());
        assert!(validate_rules(rules).is_err());
    }

    #[test]
    fn rule_order_in_file_does_not_matter() {
        let p = profile(
            &[
                (WATER_HAULED, "N"),
                (PUBLIC_WATER_SERVICE, "Y"),
                (SERVICE_ADEQUACY, "Y"),
                (WATER_HEALTH_HAZARD, "N"),
                (PUBLIC_SEWER, "Y"),
            ],
            10.0,
        );
        let mut reversed = default_rules();
        reversed.reverse();
        assert_eq!(
            assign_priorities(std::slice::from_ref(&p), &default_rules()).unwrap(),
            assign_priorities(&[p], &reversed).unwrap()
        );
    }

    #[test]
    fn predicates_round_trip_through_json() {
        let rules = default_rules();
        let json = serde_json::to_string(&rules).unwrap();
        assert_eq!(parse_rules(&json).unwrap(), rules);
        assert!(rules[4]
            .predicate
            .describe()
            .contains("mean Estimated Population < 1"));
    }

    #[test]
    fn csv_export() {
        let p = profile(
            &[
                (WATER_HAULED, "Y"),
                (PUBLIC_SEWER, "N"),
                (WATER_HEALTH_HAZARD, "N"),
            ],
            5.0,
        );
        let a = assign_priorities(&[p], &default_rules()).unwrap();
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("cluster,priority,rule,basis\nt:0,1,"));
    }
}
