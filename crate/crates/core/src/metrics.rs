//! Aggregate queries over a dataset and error reports against targets.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::coappear::{coappear_error, compute_coappear};
use crate::coordinator::ToolRunSummary;
use crate::dataset::{Cell, Dataset};
use crate::error::{Error, FeatureError};
use crate::linear::{compute_linear_matrix, linear_error, resolve_chain};
use crate::pairwise::{compute_pairwise, pairwise_error};
use crate::targets::TargetSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum QuerySpec {
    /// Tuples of the chain's root table reached from the deepest table.
    #[serde(rename_all = "camelCase")]
    ChainRootCount { chain: Vec<String> },
    /// Tuples of `referenced` with between 1 and `k` distinct referencers,
    /// where a referencer is a value of `referencer` in `referencing` or,
    /// when absent, a referencing tuple.
    #[serde(rename_all = "camelCase")]
    ReferencerThresholdCount { referencing: String, referenced: String, referencer: Option<String>, k: u64 },
    /// Referencing tuples per distinct referenced tuple.
    #[serde(rename_all = "camelCase")]
    AverageReferencers { referencing: String, referenced: String },
    /// Unordered user pairs with at least one response between them.
    #[serde(rename_all = "camelCase")]
    InteractingUserPairs { response_table: String },
}

impl QuerySpec {
    pub fn label(&self) -> String {
        match self {
            QuerySpec::ChainRootCount { chain } => format!("chainRootCount({})", chain.join(",")),
            QuerySpec::ReferencerThresholdCount { referencing, referenced, k, .. } => {
                format!("referencerThresholdCount({referencing}->{referenced},{k})")
            }
            QuerySpec::AverageReferencers { referencing, referenced } => format!("averageReferencers({referencing}->{referenced})"),
            QuerySpec::InteractingUserPairs { response_table } => format!("interactingUserPairs({response_table})"),
        }
    }
}

pub fn read_queries(text: &str) -> Result<Vec<QuerySpec>, serde_json::Error> {
    serde_json::from_str(text)
}

fn fk_column(ds: &Dataset, referencing: &str, referenced: &str) -> Result<(usize, usize), FeatureError> {
    let schema = ds.schema();
    let t = schema.table_index(referencing).ok_or_else(|| FeatureError::SpecMismatch(format!("unknown table `{referencing}`")))?;
    let target = schema.table_index(referenced).ok_or_else(|| FeatureError::SpecMismatch(format!("unknown table `{referenced}`")))?;
    let fk = schema
        .resolved_fks(t)
        .into_iter()
        .find(|fk| fk.target == target)
        .ok_or_else(|| FeatureError::SpecMismatch(format!("`{referencing}` does not reference `{referenced}`")))?;
    Ok((t, fk.value_index))
}

pub fn eval_query(ds: &Dataset, q: &QuerySpec) -> Result<f64, FeatureError> {
    match q {
        QuerySpec::ChainRootCount { chain } => {
            if chain.len() < 2 {
                return Err(FeatureError::SpecMismatch("a chain needs two tables".into()));
            }
            let chain = resolve_chain(ds.schema(), chain).map_err(|e| FeatureError::SpecMismatch(e.to_string()))?;
            let h = compute_linear_matrix(ds, &chain);
            Ok(h.get(h.k() - 1, 0) as f64)
        }
        QuerySpec::ReferencerThresholdCount { referencing, referenced, referencer, k } => {
            let (t, col) = fk_column(ds, referencing, referenced)?;
            let rcol = match referencer {
                Some(c) => Some(ds.schema().tables[t].value_index(c).ok_or_else(|| FeatureError::SpecMismatch(format!("`{referencing}` has no column `{c}`")))?),
                None => None,
            };
            let mut who: HashMap<i64, HashSet<Cell>> = HashMap::new();
            for row in ds.table(t).rows() {
                let Some(target) = row.values[col].as_int() else { continue };
                let id = match rcol {
                    Some(c) if row.values[c].is_empty() => continue,
                    Some(c) => row.values[c].clone(),
                    None => Cell::Int(row.id),
                };
                who.entry(target).or_default().insert(id);
            }
            Ok(who.values().filter(|s| s.len() as u64 <= *k).count() as f64)
        }
        QuerySpec::AverageReferencers { referencing, referenced } => {
            let (t, col) = fk_column(ds, referencing, referenced)?;
            let rows = ds.table(t).rows();
            let targets: HashSet<i64> = rows.iter().filter_map(|r| r.values[col].as_int()).collect();
            if targets.is_empty() {
                return Ok(0.0);
            }
            Ok(rows.len() as f64 / targets.len() as f64)
        }
        QuerySpec::InteractingUserPairs { response_table } => {
            let binding = ds
                .schema()
                .pairwise_bindings
                .iter()
                .find(|b| &b.response_table == response_table)
                .ok_or_else(|| FeatureError::SpecMismatch(format!("no binding on `{response_table}`")))?;
            Ok(compute_pairwise(ds, binding)?.interacting_pairs() as f64)
        }
    }
}

/// |scaled - truth| / truth.
pub fn query_error(truth: f64, scaled: f64) -> Result<f64, FeatureError> {
    if truth == 0.0 {
        return Err(FeatureError::ZeroTruth);
    }
    Ok((scaled - truth).abs() / truth.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceError {
    pub instance: String,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryResult {
    pub query: String,
    pub truth: f64,
    pub scaled: f64,
    /// `None` when the truth is zero.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorReport {
    pub linear: Vec<InstanceError>,
    pub linear_mean: Option<f64>,
    pub coappear: Vec<InstanceError>,
    pub coappear_mean: Option<f64>,
    pub pairwise: Vec<InstanceError>,
    pub pairwise_mean: Option<f64>,
    pub queries: Vec<QueryResult>,
    pub runs: Vec<ToolRunSummary>,
}

fn mean(items: &[InstanceError]) -> Option<f64> {
    if items.is_empty() {
        None
    } else {
        Some(items.iter().map(|i| i.error).sum::<f64>() / items.len() as f64)
    }
}

impl ErrorReport {
    pub fn is_empty(&self) -> bool {
        self.linear.is_empty() && self.coappear.is_empty() && self.pairwise.is_empty() && self.queries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Errors of `ds` against every target in `targets`, recomputed from scratch.
pub fn feature_error_report(ds: &Dataset, targets: &TargetSet) -> Result<ErrorReport, Error> {
    let mut r = ErrorReport::default();
    for t in &targets.linear {
        let chain = resolve_chain(ds.schema(), &t.chain)?;
        let actual = compute_linear_matrix(ds, &chain);
        r.linear.push(InstanceError { instance: chain.to_string(), error: linear_error(t, &actual)? });
    }
    for t in &targets.coappear {
        let actual = compute_coappear(ds, &t.group)?;
        r.coappear.push(InstanceError { instance: t.group.to_string(), error: coappear_error(t, &actual)? });
    }
    for t in &targets.pairwise {
        let actual = compute_pairwise(ds, &t.binding)?;
        r.pairwise.push(InstanceError { instance: t.binding.response_table.clone(), error: pairwise_error(t, &actual)? });
    }
    r.linear_mean = mean(&r.linear);
    r.coappear_mean = mean(&r.coappear);
    r.pairwise_mean = mean(&r.pairwise);
    Ok(r)
}

/// Evaluates each query on both datasets.
pub fn query_report(truth: &Dataset, scaled: &Dataset, queries: &[QuerySpec]) -> Result<Vec<QueryResult>, FeatureError> {
    queries
        .iter()
        .map(|q| {
            let (t, s) = (eval_query(truth, q)?, eval_query(scaled, q)?);
            Ok(QueryResult { query: q.label(), truth: t, scaled: s, error: query_error(t, s).ok() })
        })
        .collect()
}
