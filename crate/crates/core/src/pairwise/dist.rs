use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Cell, Dataset};
use crate::error::FeatureError;
use crate::scaler::TableSizes;
use crate::schema::PairwiseBinding;

/// Ordered user pairs by how often each responded to the other's posts,
/// plus users by how often they responded to their own posts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseDistribution {
    pub binding: PairwiseBinding,
    /// (x, y) -> ordered pairs (u, v), u != v, where u responded x times to
    /// v's posts and v responded y times to u's. The (0, 0) cell is kept in
    /// `zero_pairs`.
    pub rho_n: BTreeMap<(u32, u32), u64>,
    /// `None` means whatever |U|(|U|-1) leaves over.
    pub zero_pairs: Option<u64>,
    /// x -> users who responded x >= 1 times to their own posts.
    pub rho_s: BTreeMap<u32, u64>,
    pub zero_self: Option<u64>,
}

impl PairwiseDistribution {
    pub fn empty(binding: PairwiseBinding) -> Self {
        PairwiseDistribution { binding, rho_n: BTreeMap::new(), zero_pairs: None, rho_s: BTreeMap::new(), zero_self: None }
    }

    pub fn n(&self, x: u32, y: u32) -> u64 {
        self.rho_n.get(&(x, y)).copied().unwrap_or(0)
    }

    pub fn s(&self, x: u32) -> u64 {
        self.rho_s.get(&x).copied().unwrap_or(0)
    }

    pub fn pair_mass(&self) -> u64 {
        self.rho_n.values().sum()
    }

    pub fn self_mass(&self) -> u64 {
        self.rho_s.values().sum()
    }

    pub fn zero_pairs_for(&self, users: u64) -> u64 {
        self.zero_pairs.unwrap_or_else(|| ordered_pairs(users).saturating_sub(self.pair_mass()))
    }

    pub fn zero_self_for(&self, users: u64) -> u64 {
        self.zero_self.unwrap_or_else(|| users.saturating_sub(self.self_mass()))
    }

    /// Responses implied, counting each once.
    pub fn implied_responses(&self) -> u64 {
        let pairs: u64 = self.rho_n.iter().map(|(&(x, y), &m)| (x as u64 + y as u64) * m).sum();
        let selfs: u64 = self.rho_s.iter().map(|(&x, &m)| x as u64 * m).sum();
        pairs / 2 + selfs
    }

    /// Unordered pairs with at least one response between them.
    pub fn interacting_pairs(&self) -> u64 {
        self.pair_mass() / 2
    }
}

pub(crate) fn ordered_pairs(users: u64) -> u64 {
    users.saturating_mul(users.saturating_sub(1))
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    x: u32,
    y: u32,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct SelfEntry {
    x: u32,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PairwiseJson {
    binding: PairwiseBinding,
    #[serde(rename = "rhoN")]
    rho_n: Vec<PairEntry>,
    #[serde(rename = "rhoS", default)]
    rho_s: Vec<SelfEntry>,
}

impl Serialize for PairwiseDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut rho_n: Vec<PairEntry> = Vec::new();
        if let Some(z) = self.zero_pairs {
            rho_n.push(PairEntry { x: 0, y: 0, count: z });
        }
        rho_n.extend(self.rho_n.iter().map(|(&(x, y), &count)| PairEntry { x, y, count }));
        let mut rho_s: Vec<SelfEntry> = Vec::new();
        if let Some(z) = self.zero_self {
            rho_s.push(SelfEntry { x: 0, count: z });
        }
        rho_s.extend(self.rho_s.iter().map(|(&x, &count)| SelfEntry { x, count }));
        PairwiseJson { binding: self.binding.clone(), rho_n, rho_s }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PairwiseDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PairwiseJson::deserialize(d)?;
        let mut out = PairwiseDistribution::empty(raw.binding);
        for e in raw.rho_n {
            if (e.x, e.y) == (0, 0) {
                out.zero_pairs = Some(out.zero_pairs.unwrap_or(0) + e.count);
            } else if e.count > 0 {
                *out.rho_n.entry((e.x, e.y)).or_insert(0) += e.count;
            }
        }
        for e in raw.rho_s {
            if e.x == 0 {
                out.zero_self = Some(out.zero_self.unwrap_or(0) + e.count);
            } else if e.count > 0 {
                *out.rho_s.entry(e.x).or_insert(0) += e.count;
            }
        }
        Ok(out)
    }
}

/// Resolved positions of a binding's tables and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BindingIndex {
    pub users: usize,
    pub posts: usize,
    pub responses: usize,
    pub owner_col: usize,
    pub post_col: usize,
    pub user_col: usize,
}

impl BindingIndex {
    pub fn resolve(ds: &Dataset, b: &PairwiseBinding) -> Result<Self, FeatureError> {
        let schema = ds.schema();
        let t = |n: &String| schema.table_index(n).ok_or_else(|| FeatureError::UnknownTable(n.clone()));
        let col = |table: &String, c: &String| {
            schema
                .table(table)
                .and_then(|ts| ts.value_index(c))
                .ok_or_else(|| FeatureError::ShapeMismatch(format!("`{table}` has no column `{c}`")))
        };
        Ok(BindingIndex {
            users: t(&b.user_table)?,
            posts: t(&b.post_table)?,
            responses: t(&b.response_table)?,
            owner_col: col(&b.post_table, &b.post_owner_column)?,
            post_col: col(&b.response_table, &b.response_post_column)?,
            user_col: col(&b.response_table, &b.response_user_column)?,
        })
    }
}

/// Directed response counts (responder, owner) and self-response counts.
pub(crate) fn response_counts(ds: &Dataset, bi: &BindingIndex) -> (HashMap<(i64, i64), u32>, HashMap<i64, u32>) {
    let owner: HashMap<i64, i64> = ds
        .table(bi.posts)
        .rows()
        .iter()
        .filter_map(|r| r.values[bi.owner_col].as_int().map(|o| (r.id, o)))
        .collect();
    let mut pair = HashMap::new();
    let mut selfc = HashMap::new();
    for r in ds.table(bi.responses).rows() {
        let (Cell::Int(u), Cell::Int(p)) = (&r.values[bi.user_col], &r.values[bi.post_col]) else { continue };
        let Some(&v) = owner.get(p) else { continue };
        if *u == v {
            *selfc.entry(*u).or_insert(0) += 1;
        } else {
            *pair.entry((*u, v)).or_insert(0) += 1;
        }
    }
    (pair, selfc)
}

pub fn compute_pairwise(ds: &Dataset, b: &PairwiseBinding) -> Result<PairwiseDistribution, FeatureError> {
    let bi = BindingIndex::resolve(ds, b)?;
    let (pair, selfc) = response_counts(ds, &bi);
    let mut out = PairwiseDistribution::empty(b.clone());
    for (&(u, v), &c) in &pair {
        let back = pair.get(&(v, u)).copied().unwrap_or(0);
        *out.rho_n.entry((c, back)).or_insert(0) += 1;
        if back == 0 {
            *out.rho_n.entry((0, c)).or_insert(0) += 1;
        }
    }
    for &c in selfc.values() {
        *out.rho_s.entry(c).or_insert(0) += 1;
    }
    let users = ds.table(bi.users).len() as u64;
    out.zero_pairs = Some(ordered_pairs(users).saturating_sub(out.pair_mass()));
    out.zero_self = Some(users.saturating_sub(out.self_mass()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "condition")]
pub enum PairwiseViolation {
    /// rho(x, y) != rho(y, x).
    P1 { x: u32, y: u32 },
    /// rho(x, x) is odd although it counts both orders of each pair.
    P1Parity { x: u32 },
    /// Responses implied differ from the response table size.
    P2 { implied: u64, responses: u64 },
    /// Pair mass differs from |U|(|U|-1).
    P3 { mass: u64, pairs: u64 },
    /// Self mass differs from |U|.
    SP2 { mass: u64, users: u64 },
}

impl fmt::Display for PairwiseViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairwiseViolation::P1 { x, y } => write!(f, "P1: rho({x},{y}) != rho({y},{x})"),
            PairwiseViolation::P1Parity { x } => write!(f, "P1 parity: rho({x},{x}) is odd"),
            PairwiseViolation::P2 { implied, responses } => write!(f, "P2: implies {implied} responses, table has {responses}"),
            PairwiseViolation::P3 { mass, pairs } => write!(f, "P3: pair mass {mass}, expected {pairs}"),
            PairwiseViolation::SP2 { mass, users } => write!(f, "SP2: self mass {mass}, expected {users}"),
        }
    }
}

pub fn check_necessity_p(target: &PairwiseDistribution, sizes: &TableSizes) -> Vec<PairwiseViolation> {
    let users = sizes.get(&target.binding.user_table).copied().unwrap_or(0);
    let responses = sizes.get(&target.binding.response_table).copied().unwrap_or(0);
    let mut out = Vec::new();
    for (&(x, y), &m) in &target.rho_n {
        if x < y && target.n(y, x) != m {
            out.push(PairwiseViolation::P1 { x, y });
        }
        if x > y && !target.rho_n.contains_key(&(y, x)) {
            out.push(PairwiseViolation::P1 { x: y, y: x });
        }
        if x == y && m % 2 == 1 {
            out.push(PairwiseViolation::P1Parity { x });
        }
    }
    let twice: u64 = target.rho_n.iter().map(|(&(x, y), &m)| (x as u64 + y as u64) * m).sum::<u64>()
        + target.rho_s.iter().map(|(&x, &m)| 2 * x as u64 * m).sum::<u64>();
    if twice != 2 * responses {
        out.push(PairwiseViolation::P2 { implied: twice / 2, responses });
    }
    let pairs = ordered_pairs(users);
    let mass = match target.zero_pairs {
        Some(z) => target.pair_mass() + z,
        None => target.pair_mass().max(pairs),
    };
    if mass != pairs {
        out.push(PairwiseViolation::P3 { mass, pairs });
    }
    let smass = match target.zero_self {
        Some(z) => target.self_mass() + z,
        None => target.self_mass().max(users),
    };
    if smass != users {
        out.push(PairwiseViolation::SP2 { mass: smass, users });
    }
    out
}

/// A unit of mass in unordered form: a pair class {x <= y} or a self class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) enum Class {
    Pair(u32, u32),
    Own(u32),
}

impl Class {
    pub fn pair(x: u32, y: u32) -> Class {
        Class::Pair(x.min(y), x.max(y))
    }

    pub fn responses(self) -> u64 {
        match self {
            Class::Pair(x, y) => x as u64 + y as u64,
            Class::Own(x) => x as u64,
        }
    }

    pub fn is_zero(self) -> bool {
        self.responses() == 0
    }

    fn plus_one(self) -> Class {
        match self {
            Class::Pair(x, y) => Class::pair(x, y + 1),
            Class::Own(x) => Class::Own(x + 1),
        }
    }

    fn minus_one(self) -> Class {
        match self {
            Class::Pair(x, y) if y > 0 => Class::pair(x, y - 1),
            Class::Own(x) if x > 0 => Class::Own(x - 1),
            c => c,
        }
    }
}

/// Unordered view: pair classes count unordered user pairs.
pub(crate) fn to_classes(d: &PairwiseDistribution) -> BTreeMap<Class, u64> {
    let mut out = BTreeMap::new();
    for (&(x, y), &m) in &d.rho_n {
        if x < y {
            out.insert(Class::Pair(x, y), m);
        } else if x == y {
            out.insert(Class::Pair(x, x), m / 2);
        }
    }
    for (&x, &m) in &d.rho_s {
        out.insert(Class::Own(x), m);
    }
    out.retain(|c, m| *m > 0 && !c.is_zero());
    out
}

fn from_classes(binding: &PairwiseBinding, classes: &BTreeMap<Class, u64>, users: u64) -> PairwiseDistribution {
    let mut d = PairwiseDistribution::empty(binding.clone());
    for (&c, &m) in classes {
        if m == 0 || c.is_zero() {
            continue;
        }
        match c {
            Class::Pair(x, y) if x == y => {
                d.rho_n.insert((x, x), 2 * m);
            }
            Class::Pair(x, y) => {
                d.rho_n.insert((x, y), m);
                d.rho_n.insert((y, x), m);
            }
            Class::Own(x) => {
                d.rho_s.insert(x, m);
            }
        }
    }
    d.zero_pairs = Some(ordered_pairs(users) - d.pair_mass());
    d.zero_self = Some(users - d.self_mass());
    d
}

fn largest_class(classes: &BTreeMap<Class, u64>, pred: impl Fn(Class) -> bool) -> Option<Class> {
    let mut best: Option<(Class, u64)> = None;
    for (&c, &m) in classes {
        if m > 0 && pred(c) && best.is_none_or(|(_, bm)| m > bm) {
            best = Some((c, m));
        }
    }
    best.map(|(c, _)| c)
}

fn move_mass(classes: &mut BTreeMap<Class, u64>, from: Class, to: Class, amount: u64) {
    let m = classes.get_mut(&from).expect("source class");
    *m -= amount;
    if *m == 0 {
        classes.remove(&from);
    }
    if !to.is_zero() {
        *classes.entry(to).or_insert(0) += amount;
    }
}

/// Makes `raw` satisfy P1-P3 and SP2 for `sizes`: symmetrizes, rescales to
/// the response count and corrects the remainder one response at a time,
/// merges classes when they need more pairs or users than exist, and leaves
/// the rest to the zero cells.
pub fn repair_target_p(raw: &PairwiseDistribution, sizes: &TableSizes) -> Result<PairwiseDistribution, FeatureError> {
    let users = sizes.get(&raw.binding.user_table).copied().unwrap_or(0);
    let responses = sizes.get(&raw.binding.response_table).copied().unwrap_or(0);
    if users == 0 && responses > 0 {
        return Err(FeatureError::InfeasibleRepair(format!("`{}` is empty but responses exist", raw.binding.user_table)));
    }
    // symmetrize; odd sums split by largest remainder, ties in key order
    let mut classes: BTreeMap<Class, u64> = BTreeMap::new();
    let mut halves = Vec::new();
    for (&(x, y), &m) in &raw.rho_n {
        if (x, y) == (0, 0) || x > y {
            continue;
        }
        let sum = if x == y { m } else { m + raw.n(y, x) };
        classes.insert(Class::Pair(x, y), sum / 2);
        if sum % 2 == 1 {
            halves.push(Class::Pair(x, y));
        }
    }
    for (&(x, y), &m) in &raw.rho_n {
        if x > y && !raw.rho_n.contains_key(&(y, x)) {
            classes.insert(Class::Pair(y, x), m / 2);
            if m % 2 == 1 {
                halves.push(Class::Pair(y, x));
            }
        }
    }
    halves.sort();
    let extra = halves.len() / 2;
    for c in halves.into_iter().take(extra) {
        *classes.get_mut(&c).expect("present") += 1;
    }
    for (&x, &m) in &raw.rho_s {
        if x > 0 {
            classes.insert(Class::Own(x), m);
        }
    }
    classes.retain(|_, m| *m > 0);

    let max_pairs = ordered_pairs(users) / 2;
    if max_pairs == 0 {
        // a single user: every response is a self-response
        let moved: Vec<(Class, u64)> = classes.iter().filter(|(c, _)| matches!(c, Class::Pair(..))).map(|(c, m)| (*c, *m)).collect();
        for (c, m) in moved {
            classes.remove(&c);
            *classes.entry(Class::Own(c.responses() as u32)).or_insert(0) += m;
        }
    }

    let implied = |cl: &BTreeMap<Class, u64>| cl.iter().map(|(c, m)| c.responses() * m).sum::<u64>();
    let have = implied(&classes);
    if have != responses {
        if have > 0 && responses > 0 {
            let mass: u64 = classes.values().sum();
            let scaled = ((mass as u128 * responses as u128 + have as u128 / 2) / have as u128) as u64;
            classes = rescale_classes(&classes, scaled.clamp(1, responses));
        } else if responses == 0 {
            classes.clear();
        }
        loop {
            let got = implied(&classes);
            if got == responses {
                break;
            }
            if got < responses {
                let need = responses - got;
                match largest_class(&classes, |_| true) {
                    None => {
                        let c = if max_pairs > 0 { Class::pair(0, need as u32) } else { Class::Own(need as u32) };
                        classes.insert(c, 1);
                    }
                    Some(c) => {
                        let amount = classes[&c].min(need).div_ceil(2).max(1).min(need);
                        move_mass(&mut classes, c, c.plus_one(), amount);
                    }
                }
            } else {
                let excess = got - responses;
                let c = largest_class(&classes, |c| !c.is_zero()).expect("positive responses");
                let amount = classes[&c].min(excess).div_ceil(2).max(1).min(excess);
                move_mass(&mut classes, c, c.minus_one(), amount);
            }
        }
    }

    // more classes than pairs or users: merge two units into one
    for pairs_side in [true, false] {
        let limit = if pairs_side { max_pairs } else { users };
        let is_side = |c: &Class| matches!(c, Class::Pair(..)) == pairs_side;
        loop {
            let mass: u64 = classes.iter().filter(|(c, _)| is_side(c)).map(|(_, m)| m).sum();
            if mass <= limit {
                break;
            }
            let a = largest_class(&classes, |c| is_side(&c)).expect("mass above limit");
            let b = if classes[&a] >= 2 {
                a
            } else {
                *classes.keys().find(|c| is_side(c) && **c != a).expect("two classes")
            };
            let merged = match (a, b) {
                (Class::Pair(x1, y1), Class::Pair(x2, y2)) => Class::pair(x1 + x2, y1 + y2),
                (Class::Own(x1), Class::Own(x2)) => Class::Own(x1 + x2),
                _ => unreachable!("same side"),
            };
            for c in [a, b] {
                let m = classes.get_mut(&c).expect("present");
                *m -= 1;
                if *m == 0 {
                    classes.remove(&c);
                }
            }
            *classes.entry(merged).or_insert(0) += 1;
        }
    }
    Ok(from_classes(&raw.binding, &classes, users))
}

fn rescale_classes(classes: &BTreeMap<Class, u64>, total: u64) -> BTreeMap<Class, u64> {
    let sum: u64 = classes.values().sum();
    let mut out = BTreeMap::new();
    let mut rems = Vec::new();
    let mut given = 0u64;
    for (&c, &m) in classes {
        let exact = m as u128 * total as u128;
        let base = (exact / sum as u128) as u64;
        given += base;
        out.insert(c, base);
        rems.push((exact % sum as u128, c));
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, c) in rems.into_iter().take((total - given) as usize) {
        *out.get_mut(&c).expect("present") += 1;
    }
    out.retain(|_, m| *m > 0);
    out
}

/// Scales pair masses with the response table and self masses with the
/// user table, then repairs against `new_sizes`.
pub fn generate_target_p(orig: &PairwiseDistribution, orig_sizes: &TableSizes, new_sizes: &TableSizes) -> Result<PairwiseDistribution, FeatureError> {
    let ratio = |t: &String| {
        let before = orig_sizes.get(t).copied().unwrap_or(0);
        let after = new_sizes.get(t).copied().unwrap_or(0);
        if before == 0 {
            0.0
        } else {
            after as f64 / before as f64
        }
    };
    let (rr, ru) = (ratio(&orig.binding.response_table), ratio(&orig.binding.user_table));
    let mut raw = PairwiseDistribution::empty(orig.binding.clone());
    for (&k, &m) in &orig.rho_n {
        raw.rho_n.insert(k, (m as f64 * rr).round() as u64);
    }
    for (&k, &m) in &orig.rho_s {
        raw.rho_s.insert(k, (m as f64 * ru).round() as u64);
    }
    raw.rho_n.retain(|_, m| *m > 0);
    raw.rho_s.retain(|_, m| *m > 0);
    repair_target_p(&raw, new_sizes)
}

/// Summed absolute cell differences over ordered pairs and self cells,
/// zero cells included, divided by |U|(|U|-1) of `actual`.
pub fn pairwise_error(target: &PairwiseDistribution, actual: &PairwiseDistribution) -> Result<f64, FeatureError> {
    if target.binding != actual.binding {
        return Err(FeatureError::BindingMismatch(format!("{} vs {}", target.binding.response_table, actual.binding.response_table)));
    }
    let users = actual.self_mass() + actual.zero_self.unwrap_or(0);
    let denom = ordered_pairs(users).max(1);
    let mut diff = 0u64;
    for (k, &m) in &actual.rho_n {
        diff += m.abs_diff(target.rho_n.get(k).copied().unwrap_or(0));
    }
    diff += target.rho_n.iter().filter(|(k, _)| !actual.rho_n.contains_key(k)).map(|(_, m)| m).sum::<u64>();
    diff += actual.zero_pairs_for(users).abs_diff(target.zero_pairs_for(users));
    for (k, &m) in &actual.rho_s {
        diff += m.abs_diff(target.rho_s.get(k).copied().unwrap_or(0));
    }
    diff += target.rho_s.iter().filter(|(k, _)| !actual.rho_s.contains_key(k)).map(|(_, m)| m).sum::<u64>();
    diff += actual.zero_self_for(users).abs_diff(target.zero_self_for(users));
    Ok(diff as f64 / denom as f64)
}
