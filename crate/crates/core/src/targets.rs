//! Target bundles: loading explicit targets and generating defaults by
//! scaling the features of the input dataset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::enumerate_maximal_chains;
use crate::coappear::{check_necessity_c, compute_coappear, detect_coappear_groups, generate_target_c, repair_target_c, CoappearDistribution};
use crate::dataset::Dataset;
use crate::error::{DataError, Error};
use crate::linear::{check_necessity_l, compute_linear_matrix, generate_target_l, repair_target_l, resolve_chain, LinearJoinMatrix};
use crate::pairwise::{check_necessity_p, compute_pairwise, generate_target_p, repair_target_p, PairwiseDistribution};
use crate::scaler::TableSizes;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSet {
    pub linear: Vec<LinearJoinMatrix>,
    pub coappear: Vec<CoappearDistribution>,
    pub pairwise: Vec<PairwiseDistribution>,
}

impl TargetSet {
    pub fn is_empty(&self) -> bool {
        self.linear.is_empty() && self.coappear.is_empty() && self.pairwise.is_empty()
    }

    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::SchemaParse(format!("targets: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("targets serialize")
    }

    /// Replaces each feature kind present in `other`.
    pub fn override_with(&mut self, other: TargetSet) {
        if !other.linear.is_empty() {
            self.linear = other.linear;
        }
        if !other.coappear.is_empty() {
            self.coappear = other.coappear;
        }
        if !other.pairwise.is_empty() {
            self.pairwise = other.pairwise;
        }
    }
}

impl TargetSet {
    /// Every necessary condition the targets break at `sizes`, one line each.
    pub fn violations(&self, sizes: &TableSizes) -> Result<Vec<String>, Error> {
        let mut out = Vec::new();
        for t in &self.linear {
            let name = t.chain.join(",");
            out.extend(check_necessity_l(t, &chain_sizes(sizes, &t.chain))?.iter().map(|v| format!("linear {name}: {v}")));
        }
        for t in &self.coappear {
            out.extend(check_necessity_c(t, sizes).iter().map(|v| format!("coappear {}: {v}", t.group)));
        }
        for t in &self.pairwise {
            out.extend(check_necessity_p(t, sizes).iter().map(|v| format!("pairwise {}: {v}", t.binding.response_table)));
        }
        Ok(out)
    }

    /// Repairs every target that is not satisfiable at `sizes`. Returns the
    /// repaired set and a note per repaired instance.
    pub fn repaired(&self, sizes: &TableSizes) -> Result<(TargetSet, Vec<String>), Error> {
        let mut out = self.clone();
        let mut notes = Vec::new();
        for t in &mut out.linear {
            let cs = chain_sizes(sizes, &t.chain);
            if !check_necessity_l(t, &cs)?.is_empty() {
                *t = repair_target_l(t, &cs)?;
                notes.push(format!("linear {}", t.chain.join(",")));
            }
        }
        for t in &mut out.coappear {
            if !check_necessity_c(t, sizes).is_empty() {
                *t = repair_target_c(t, sizes)?;
                notes.push(format!("coappear {}", t.group));
            }
        }
        for t in &mut out.pairwise {
            if !check_necessity_p(t, sizes).is_empty() {
                *t = repair_target_p(t, sizes)?;
                notes.push(format!("pairwise {}", t.binding.response_table));
            }
        }
        Ok((out, notes))
    }
}

fn chain_sizes(sizes: &TableSizes, chain: &[String]) -> Vec<u64> {
    chain.iter().map(|t| sizes.get(t).copied().unwrap_or(0)).collect()
}

/// Features of `source` scaled to `new_sizes` and repaired: every maximal
/// chain of length two or more, every coappear group and every pairwise
/// binding of the schema.
pub fn generate_targets(source: &Dataset, new_sizes: &TableSizes) -> Result<TargetSet, Error> {
    let schema = source.schema();
    let orig_sizes = source.sizes();
    let mut out = TargetSet::default();
    for chain in enumerate_maximal_chains(schema)? {
        if chain.tables.len() < 2 {
            continue;
        }
        let chain = resolve_chain(schema, &chain.tables)?;
        let h = compute_linear_matrix(source, &chain);
        out.linear.push(generate_target_l(&h, &chain_sizes(&orig_sizes, &chain.tables), &chain_sizes(new_sizes, &chain.tables))?);
    }
    for group in detect_coappear_groups(schema) {
        let xi = compute_coappear(source, &group)?;
        out.coappear.push(generate_target_c(&xi, &orig_sizes, new_sizes)?);
    }
    for binding in &schema.pairwise_bindings {
        let rho = compute_pairwise(source, binding)?;
        out.pairwise.push(generate_target_p(&rho, &orig_sizes, new_sizes)?);
    }
    Ok(out)
}
