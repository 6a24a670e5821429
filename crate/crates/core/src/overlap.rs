//! Which tools touched common tuples, and the largest set that did not.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::coordinator::AccessLog;
use crate::error::OverlapError;
use crate::modification::JournalRecord;

pub const MAX_EXACT_NODES: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverlapGraph {
    /// Tool names, sorted.
    pub nodes: Vec<String>,
    /// Index pairs (a < b) of tools sharing at least one tuple.
    pub edges: BTreeSet<(usize, usize)>,
}

impl OverlapGraph {
    pub fn from_access_log(log: &AccessLog) -> Self {
        let nodes: Vec<String> = log.keys().cloned().collect();
        let sets: Vec<_> = log.values().collect();
        let mut edges = BTreeSet::new();
        for a in 0..sets.len() {
            for b in a + 1..sets.len() {
                let (small, large) = if sets[a].len() <= sets[b].len() { (sets[a], sets[b]) } else { (sets[b], sets[a]) };
                if small.iter().any(|k| large.contains(k)) {
                    edges.insert((a, b));
                }
            }
        }
        OverlapGraph { nodes, edges }
    }

    /// Same as [`OverlapGraph::from_access_log`], over the tuples a journal
    /// says each tool modified.
    pub fn from_journal(records: &[JournalRecord]) -> Self {
        let mut touched: BTreeMap<&str, BTreeSet<(&str, i64)>> = BTreeMap::new();
        for r in records {
            let set = touched.entry(r.tool_name.as_str()).or_default();
            set.extend(r.tuple_ids.iter().map(|&t| (r.table_id.as_str(), t)));
        }
        let nodes: Vec<&str> = touched.keys().copied().collect();
        let sets: Vec<_> = touched.values().collect();
        let mut edges = Vec::new();
        for a in 0..sets.len() {
            for b in a + 1..sets.len() {
                if !sets[a].is_disjoint(sets[b]) {
                    edges.push((nodes[a], nodes[b]));
                }
            }
        }
        Self::from_edges(&nodes, &edges)
    }

    /// Builds a graph over explicitly named tools; `edges` name tool pairs.
    pub fn from_edges(nodes: &[&str], edges: &[(&str, &str)]) -> Self {
        let mut names: Vec<String> = nodes.iter().map(|s| s.to_string()).collect();
        names.sort();
        names.dedup();
        let idx = |n: &str| names.iter().position(|x| x == n).expect("edge names a listed node");
        let edges = edges
            .iter()
            .map(|(a, b)| {
                let (a, b) = (idx(a), idx(b));
                (a.min(b), a.max(b))
            })
            .filter(|(a, b)| a != b)
            .collect();
        OverlapGraph { nodes: names, edges }
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        let (Some(x), Some(y)) = (self.nodes.iter().position(|n| n == a), self.nodes.iter().position(|n| n == b)) else {
            return false;
        };
        self.edges.contains(&(x.min(y), x.max(y)))
    }

    /// Exact maximum independent set. Among maximum sets the one whose sorted
    /// name list is lexicographically smallest wins.
    pub fn max_independent_set(&self) -> Result<Vec<String>, OverlapError> {
        let n = self.nodes.len();
        if n > MAX_EXACT_NODES {
            return Err(OverlapError::GraphTooLarge { nodes: n, limit: MAX_EXACT_NODES });
        }
        let mut adj = vec![0u32; n];
        for &(a, b) in &self.edges {
            adj[a] |= 1 << b;
            adj[b] |= 1 << a;
        }
        let all = if n == 0 { 0 } else { u32::MAX >> (32 - n) };
        let best = mis(all, &adj);
        Ok((0..n).filter(|i| best & (1 << i) != 0).map(|i| self.nodes[i].clone()).collect())
    }
}

fn better(a: u32, b: u32) -> u32 {
    match a.count_ones().cmp(&b.count_ones()) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        // lowest differing bit decides: the set holding it sorts first
        std::cmp::Ordering::Equal => {
            let diff = a ^ b;
            if diff == 0 || a & (diff & diff.wrapping_neg()) != 0 {
                a
            } else {
                b
            }
        }
    }
}

fn mis(cand: u32, adj: &[u32]) -> u32 {
    if cand == 0 {
        return 0;
    }
    let mut free = 0u32;
    let mut pivot = None;
    let mut pivot_deg = 0;
    let mut rest = cand;
    while rest != 0 {
        let v = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let deg = (adj[v] & cand).count_ones();
        if deg == 0 {
            free |= 1 << v;
        } else if deg > pivot_deg {
            pivot_deg = deg;
            pivot = Some(v);
        }
    }
    let Some(v) = pivot else { return free };
    let cand = cand & !free;
    let without = mis(cand & !(1 << v), adj);
    let with = (1 << v) | mis(cand & !(1 << v) & !adj[v], adj);
    free | better(with, without)
}
