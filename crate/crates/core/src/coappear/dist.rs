use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Cell, Dataset};
use crate::error::FeatureError;
use crate::scaler::TableSizes;
use crate::schema::DatasetSchema;

/// Tables that reference exactly the same set of tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoappearGroup {
    pub referencing: Vec<String>,
    pub referenced: Vec<String>,
}

impl fmt::Display for CoappearGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}} -> {{{}}}", self.referencing.join(","), self.referenced.join(","))
    }
}

impl CoappearGroup {
    /// Value index of the column in each referencing table that points to
    /// each referenced table.
    pub fn fk_value_indexes(&self, schema: &DatasetSchema) -> Result<Vec<Vec<usize>>, FeatureError> {
        self.referencing
            .iter()
            .map(|t| {
                let ts = schema.table(t).ok_or_else(|| FeatureError::UnknownTable(t.clone()))?;
                self.referenced
                    .iter()
                    .map(|r| {
                        let fk = ts.foreign_keys.iter().find(|fk| &fk.references == r).ok_or_else(|| {
                            FeatureError::ShapeMismatch(format!("`{t}` does not reference `{r}`"))
                        })?;
                        Ok(ts.value_index(&fk.column).expect("validated"))
                    })
                    .collect()
            })
            .collect()
    }

    /// Number of foreign-key combinations, the product of referenced sizes.
    pub fn combinations(&self, sizes: &TableSizes) -> u64 {
        self.referenced.iter().map(|r| sizes.get(r).copied().unwrap_or(0)).fold(1u64, u64::saturating_mul)
    }

    fn referencing_sizes(&self, sizes: &TableSizes) -> Vec<u64> {
        self.referencing.iter().map(|t| sizes.get(t).copied().unwrap_or(0)).collect()
    }
}

/// Groups referencing tables by their referenced-table set. Ordered by the
/// referenced set, then by member names.
pub fn detect_coappear_groups(schema: &DatasetSchema) -> Vec<CoappearGroup> {
    let mut by_set: BTreeMap<Vec<String>, Vec<String>> = BTreeMap::new();
    for t in &schema.tables {
        let set: BTreeSet<String> = t.foreign_keys.iter().map(|fk| fk.references.clone()).collect();
        if set.is_empty() {
            continue;
        }
        by_set.entry(set.into_iter().collect()).or_default().push(t.name.clone());
    }
    let mut groups: Vec<CoappearGroup> = by_set
        .into_iter()
        .map(|(referenced, mut referencing)| {
            referencing.sort();
            CoappearGroup { referencing, referenced }
        })
        .collect();
    groups.sort();
    groups
}

/// How many foreign-key combinations appear `v_i` times in each referencing
/// table `i`. Only nonzero vectors are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoappearDistribution {
    pub group: CoappearGroup,
    pub entries: BTreeMap<Vec<u32>, u64>,
    /// Combinations that appear nowhere; `None` means whatever the
    /// combination count leaves over.
    pub zero_mass: Option<u64>,
}

impl CoappearDistribution {
    pub fn nonzero_mass(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn zero_mass_for(&self, combinations: u64) -> u64 {
        self.zero_mass.unwrap_or_else(|| combinations.saturating_sub(self.nonzero_mass()))
    }

    pub fn get(&self, v: &[u32]) -> u64 {
        self.entries.get(v).copied().unwrap_or(0)
    }

    /// Occurrences implied in referencing table `i`.
    pub fn marginal(&self, i: usize) -> u64 {
        self.entries.iter().map(|(v, n)| v[i] as u64 * n).sum()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DistEntry {
    v: Vec<u32>,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DistJson {
    group: CoappearGroup,
    entries: Vec<DistEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zero_mass: Option<u64>,
}

impl Serialize for CoappearDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DistJson {
            group: self.group.clone(),
            entries: self.entries.iter().map(|(v, &count)| DistEntry { v: v.clone(), count }).collect(),
            zero_mass: self.zero_mass,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoappearDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = DistJson::deserialize(d)?;
        let k = raw.group.referencing.len();
        let mut entries = BTreeMap::new();
        let mut zero = raw.zero_mass;
        for e in raw.entries {
            if e.v.len() != k {
                return Err(serde::de::Error::custom(format!("vector {:?} has {} entries, group has {k} tables", e.v, e.v.len())));
            }
            if e.v.iter().all(|&x| x == 0) {
                zero = Some(zero.unwrap_or(0) + e.count);
            } else if e.count > 0 {
                *entries.entry(e.v).or_insert(0) += e.count;
            }
        }
        Ok(CoappearDistribution { group: raw.group, entries, zero_mass: zero })
    }
}

/// Foreign-key combination of each referencing tuple, skipping tuples with
/// an empty key cell.
pub(crate) fn combination_counts(ds: &Dataset, group: &CoappearGroup) -> Result<HashMap<Vec<i64>, Vec<u32>>, FeatureError> {
    let cols = group.fk_value_indexes(ds.schema())?;
    let k = group.referencing.len();
    let mut combos: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
    for (i, t) in group.referencing.iter().enumerate() {
        let table = ds.table_by_name(t).ok_or_else(|| FeatureError::UnknownTable(t.clone()))?;
        'rows: for row in table.rows() {
            let mut key = Vec::with_capacity(cols[i].len());
            for &c in &cols[i] {
                match row.values[c] {
                    Cell::Int(v) => key.push(v),
                    _ => continue 'rows,
                }
            }
            combos.entry(key).or_insert_with(|| vec![0; k])[i] += 1;
        }
    }
    Ok(combos)
}

pub fn compute_coappear(ds: &Dataset, group: &CoappearGroup) -> Result<CoappearDistribution, FeatureError> {
    let combos = combination_counts(ds, group)?;
    let mut entries = BTreeMap::new();
    for v in combos.into_values() {
        *entries.entry(v).or_insert(0) += 1;
    }
    let n = group.combinations(&ds.sizes());
    let nonzero: u64 = entries.values().sum();
    Ok(CoappearDistribution { group: group.clone(), entries, zero_mass: Some(n.saturating_sub(nonzero)) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "condition")]
pub enum CoappearViolation {
    /// Occurrences implied for a referencing table differ from its size.
    C1 { table: String, implied: u64, size: u64 },
    /// Total mass differs from the number of combinations.
    C2 { mass: u64, combinations: u64 },
}

impl fmt::Display for CoappearViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoappearViolation::C1 { table, implied, size } => write!(f, "C1 on `{table}`: implies {implied}, size {size}"),
            CoappearViolation::C2 { mass, combinations } => write!(f, "C2: mass {mass}, combinations {combinations}"),
        }
    }
}

pub fn check_necessity_c(target: &CoappearDistribution, sizes: &TableSizes) -> Vec<CoappearViolation> {
    let mut out = Vec::new();
    for (i, (t, size)) in target.group.referencing.iter().zip(target.group.referencing_sizes(sizes)).enumerate() {
        let implied = target.marginal(i);
        if implied != size {
            out.push(CoappearViolation::C1 { table: t.clone(), implied, size });
        }
    }
    let n = target.group.combinations(sizes);
    let nonzero = target.nonzero_mass();
    let mass = match target.zero_mass {
        Some(z) => nonzero + z,
        None => nonzero.max(n),
    };
    if mass != n {
        out.push(CoappearViolation::C2 { mass, combinations: n });
    }
    out
}

/// Scales `entries` so the masses sum to `total`, largest remainder first,
/// ties by vector order.
fn rescale(entries: &BTreeMap<Vec<u32>, u64>, total: u64) -> BTreeMap<Vec<u32>, u64> {
    let sum: u64 = entries.values().sum();
    if sum == 0 {
        return BTreeMap::new();
    }
    let mut out = BTreeMap::new();
    let mut rems: Vec<(u128, &Vec<u32>)> = Vec::new();
    let mut given = 0u64;
    for (v, &m) in entries {
        let exact = m as u128 * total as u128;
        let base = (exact / sum as u128) as u64;
        given += base;
        out.insert(v.clone(), base);
        rems.push((exact % sum as u128, v));
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    for (_, v) in rems.into_iter().take((total - given) as usize) {
        *out.get_mut(v).expect("present") += 1;
    }
    out.retain(|_, m| *m > 0);
    out
}

fn largest(entries: &BTreeMap<Vec<u32>, u64>, pred: impl Fn(&[u32]) -> bool) -> Option<Vec<u32>> {
    let mut best: Option<(&Vec<u32>, u64)> = None;
    for (v, &m) in entries {
        if m > 0 && pred(v) && best.is_none_or(|(_, bm)| m > bm) {
            best = Some((v, m));
        }
    }
    best.map(|(v, _)| v.clone())
}

fn shift(entries: &mut BTreeMap<Vec<u32>, u64>, from: &[u32], to: Vec<u32>, amount: u64) {
    let m = entries.get_mut(from).expect("source vector");
    *m -= amount;
    if *m == 0 {
        entries.remove(from);
    }
    if to.iter().any(|&x| x > 0) {
        *entries.entry(to).or_insert(0) += amount;
    }
}

/// Makes `raw` satisfy C1 and C2 for `sizes`. Masses are rescaled to the
/// referencing tables' total size, each marginal is then corrected by
/// moving mass between neighbouring vectors, vectors are merged when there
/// are more of them than combinations, and the zero mass takes the rest.
pub fn repair_target_c(raw: &CoappearDistribution, sizes: &TableSizes) -> Result<CoappearDistribution, FeatureError> {
    let k = raw.group.referencing.len();
    let n = raw.group.combinations(sizes);
    let want = raw.group.referencing_sizes(sizes);
    let mut entries: BTreeMap<Vec<u32>, u64> =
        raw.entries.iter().filter(|(v, m)| **m > 0 && v.len() == k && v.iter().any(|&x| x > 0)).map(|(v, m)| (v.clone(), *m)).collect();
    if want.iter().any(|&w| w > 0) && n == 0 {
        return Err(FeatureError::InfeasibleRepair(format!("{}: referenced tables are empty", raw.group)));
    }
    let marginals = |e: &BTreeMap<Vec<u32>, u64>| -> Vec<u64> {
        (0..k).map(|i| e.iter().map(|(v, m)| v[i] as u64 * m).sum()).collect()
    };
    if marginals(&entries) != want {
        let have: u64 = marginals(&entries).iter().sum();
        let total_want: u64 = want.iter().sum();
        if have > 0 && have != total_want {
            let mass: u64 = entries.values().sum();
            let scaled = ((mass as u128 * total_want as u128 + have as u128 / 2) / have as u128) as u64;
            entries = rescale(&entries, scaled.max(1).min(total_want.max(1)));
        }
        for i in 0..k {
            loop {
                let got: u64 = entries.iter().map(|(v, m)| v[i] as u64 * m).sum();
                if got == want[i] {
                    break;
                }
                if got < want[i] {
                    let need = want[i] - got;
                    match largest(&entries, |_| true) {
                        None => {
                            let mut v = vec![0; k];
                            v[i] = need as u32;
                            entries.insert(v, 1);
                        }
                        Some(v) => {
                            let amount = entries[&v].min(need).div_ceil(2).max(1).min(need);
                            let mut to = v.clone();
                            to[i] += 1;
                            shift(&mut entries, &v, to, amount);
                        }
                    }
                } else {
                    let excess = got - want[i];
                    let v = largest(&entries, |v| v[i] > 0).expect("positive marginal has a vector");
                    let amount = entries[&v].min(excess).div_ceil(2).max(1).min(excess);
                    let mut to = v.clone();
                    to[i] -= 1;
                    shift(&mut entries, &v, to, amount);
                }
            }
        }
    }
    // more distinct combinations used than exist: merge pairs
    while entries.values().sum::<u64>() > n {
        let v = largest(&entries, |_| true).expect("nonzero mass");
        if entries[&v] >= 2 {
            let merged: Vec<u32> = v.iter().map(|x| x * 2).collect();
            let m = entries.get_mut(&v).expect("present");
            *m -= 2;
            if *m == 0 {
                entries.remove(&v);
            }
            *entries.entry(merged).or_insert(0) += 1;
        } else {
            let mut it = entries.keys().cloned();
            let a = it.next().expect("nonzero mass");
            let b = it.next().expect("mass exceeds combinations, so two vectors exist");
            let merged: Vec<u32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            for key in [&a, &b] {
                let m = entries.get_mut(key).expect("present");
                *m -= 1;
                if *m == 0 {
                    entries.remove(key);
                }
            }
            *entries.entry(merged).or_insert(0) += 1;
        }
    }
    let nonzero: u64 = entries.values().sum();
    Ok(CoappearDistribution { group: raw.group.clone(), entries, zero_mass: Some(n - nonzero) })
}

/// Scales every nonzero mass by the growth of the referencing tables, then
/// repairs against `new_sizes`.
pub fn generate_target_c(orig: &CoappearDistribution, orig_sizes: &TableSizes, new_sizes: &TableSizes) -> Result<CoappearDistribution, FeatureError> {
    let before: u64 = orig.group.referencing_sizes(orig_sizes).iter().sum();
    let after: u64 = orig.group.referencing_sizes(new_sizes).iter().sum();
    let mut raw = orig.clone();
    raw.zero_mass = None;
    if before > 0 {
        for m in raw.entries.values_mut() {
            *m = (*m as f64 * after as f64 / before as f64).round() as u64;
        }
    }
    repair_target_c(&raw, new_sizes)
}

/// Sum of absolute mass differences, zero vector included, divided by the
/// number of combinations of `actual`.
pub fn coappear_error(target: &CoappearDistribution, actual: &CoappearDistribution) -> Result<f64, FeatureError> {
    if target.group != actual.group {
        return Err(FeatureError::GroupMismatch(format!("{} vs {}", target.group, actual.group)));
    }
    let n = actual.nonzero_mass() + actual.zero_mass.unwrap_or(0);
    if n == 0 {
        return Ok(0.0);
    }
    let mut diff = 0u64;
    for (v, &m) in &actual.entries {
        diff += m.abs_diff(target.get(v));
    }
    for (v, &m) in &target.entries {
        if !actual.entries.contains_key(v) {
            diff += m;
        }
    }
    diff += actual.zero_mass_for(n).abs_diff(target.zero_mass_for(n));
    Ok(diff as f64 / n as f64)
}
