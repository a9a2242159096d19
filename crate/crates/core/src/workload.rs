//! Query workloads: SPJ queries with single-sided range predicates, their
//! left-deep orderings, exact labeling and the robustness hold-out splits.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::relstore::{active_domain, ColumnRef, Database, DatabaseSchema, JoinEdge};
use crate::seed;

/// `column ≤ threshold`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Selection {
    pub column: ColumnRef,
    #[serde(rename = "le")]
    pub threshold: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub relations: BTreeSet<String>,
    pub joins: BTreeSet<JoinEdge>,
    pub selections: Vec<Selection>,
}

impl Query {
    pub fn single(relation: &str, selections: Vec<Selection>) -> Self {
        Query {
            relations: BTreeSet::from([relation.to_string()]),
            joins: BTreeSet::new(),
            selections,
        }
    }

    /// Every schema join edge with both endpoints among `relations`.
    pub fn induced(schema: &DatabaseSchema, relations: BTreeSet<String>, selections: Vec<Selection>) -> Self {
        let joins = schema
            .join_edges
            .iter()
            .filter(|e| relations.contains(&e.fk.relation) && relations.contains(&e.pk.relation))
            .cloned()
            .collect();
        Query {
            relations,
            joins,
            selections,
        }
    }

    pub fn validate(&self, schema: &DatabaseSchema) -> Result<()> {
        if self.relations.is_empty() {
            return Err(Error::InvalidQuery("no relations".into()));
        }
        for r in &self.relations {
            if schema.relation(r).is_none() {
                return Err(Error::UnknownRelation(r.clone()));
            }
        }
        for j in &self.joins {
            if !schema.join_edges.contains(j) {
                return Err(Error::InvalidQuery(format!("`{j}` is not a schema join edge")));
            }
            if !self.relations.contains(&j.fk.relation) || !self.relations.contains(&j.pk.relation) {
                return Err(Error::InvalidQuery(format!("`{j}` references an unlisted relation")));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.selections {
            if schema.column_def(&s.column).is_none() {
                return Err(Error::UnknownColumn(s.column.to_string()));
            }
            if !schema.is_selection_column(&s.column) {
                return Err(Error::InvalidQuery(format!(
                    "`{}` is not eligible for predicates",
                    s.column
                )));
            }
            if !self.relations.contains(&s.column.relation) {
                return Err(Error::InvalidQuery(format!(
                    "`{}` belongs to an unreferenced relation",
                    s.column
                )));
            }
            if !seen.insert(&s.column) {
                return Err(Error::InvalidQuery(format!("two predicates on `{}`", s.column)));
            }
        }
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let Some(first) = self.relations.iter().next() else {
            return true;
        };
        let mut seen: BTreeSet<&str> = BTreeSet::from([first.as_str()]);
        let mut stack = vec![first.as_str()];
        while let Some(r) = stack.pop() {
            for j in &self.joins {
                if let Some(o) = j.other(r) {
                    if seen.insert(o) {
                        stack.push(o);
                    }
                }
            }
        }
        seen.len() == self.relations.len()
    }

    /// The subquery over `subset`: its selections and every join of `self`
    /// between members of the subset.
    pub fn subquery(&self, subset: &BTreeSet<String>) -> Query {
        Query {
            relations: subset.clone(),
            joins: self
                .joins
                .iter()
                .filter(|j| subset.contains(&j.fk.relation) && subset.contains(&j.pk.relation))
                .cloned()
                .collect(),
            selections: self
                .selections
                .iter()
                .filter(|s| subset.contains(&s.column.relation))
                .cloned()
                .collect(),
        }
    }

    pub fn selections_on<'a>(&'a self, relation: &'a str) -> impl Iterator<Item = &'a Selection> {
        self.selections.iter().filter(move |s| s.column.relation == relation)
    }

    /// Π of base row counts of the referenced relations.
    pub fn cartesian_size(&self, db: &Database) -> Result<f64> {
        self.relations
            .iter()
            .try_fold(1.0, |acc, r| Ok(acc * db.row_count(r)? as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step {
    pub relation: String,
    pub selections: Vec<Selection>,
    /// Join predicates linking this relation to the earlier steps; empty for
    /// the first step.
    pub joins: Vec<JoinEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JoinSequence {
    pub steps: Vec<Step>,
}

impl JoinSequence {
    /// Builds the left-deep sequence for `q` in the given relation order.
    pub fn from_order(q: &Query, order: &[String]) -> Result<Self> {
        let listed: BTreeSet<&String> = order.iter().collect();
        if listed.len() != order.len() || listed.len() != q.relations.len() || order.iter().any(|r| !q.relations.contains(r)) {
            return Err(Error::InvalidQuery("order is not a permutation of the query's relations".into()));
        }
        let mut steps = Vec::with_capacity(order.len());
        for (t, r) in order.iter().enumerate() {
            let prior = &order[..t];
            let joins: Vec<JoinEdge> = q
                .joins
                .iter()
                .filter(|j| j.other(r).is_some_and(|o| prior.iter().any(|p| p == o)))
                .cloned()
                .collect();
            if t > 0 && joins.is_empty() {
                return Err(Error::InvalidQuery(format!("`{r}` does not connect to the earlier relations")));
            }
            steps.push(Step {
                relation: r.clone(),
                selections: q.selections_on(r).cloned().collect(),
                joins,
            });
        }
        Ok(JoinSequence { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn order(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.relation.clone()).collect()
    }

    /// The query made of the first `len` steps.
    pub fn prefix_query(&self, len: usize) -> Query {
        let steps = &self.steps[..len];
        Query {
            relations: steps.iter().map(|s| s.relation.clone()).collect(),
            joins: steps.iter().flat_map(|s| s.joins.iter().cloned()).collect(),
            selections: steps.iter().flat_map(|s| s.selections.iter().cloned()).collect(),
        }
    }

    pub fn prefix(&self, len: usize) -> JoinSequence {
        JoinSequence {
            steps: self.steps[..len].to_vec(),
        }
    }

    pub fn to_query(&self) -> Query {
        self.prefix_query(self.steps.len())
    }

    pub fn validate(&self, schema: &DatabaseSchema) -> Result<()> {
        let q = self.to_query();
        q.validate(schema)?;
        let rebuilt = JoinSequence::from_order(&q, &self.order())?;
        if rebuilt != *self {
            return Err(Error::InvalidQuery("sequence steps are not a valid left-deep order".into()));
        }
        Ok(())
    }
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn subset_connected(schema: &DatabaseSchema, members: &[usize]) -> bool {
    let inside: BTreeSet<usize> = members.iter().copied().collect();
    let mut seen = BTreeSet::from([members[0]]);
    let mut stack = vec![members[0]];
    while let Some(i) = stack.pop() {
        for n in schema.neighbors(i) {
            if inside.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == members.len()
}

/// All connected relation subsets of size `k`, each as sorted relation
/// indices, in lexicographic order.
pub fn connected_subsets(schema: &DatabaseSchema, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    combinations(schema.relations.len(), k, |c| {
        if subset_connected(schema, c) {
            out.push(c.to_vec());
        }
    });
    out
}

/// Probability that an eligible column of a chosen relation receives a
/// predicate.
pub const PREDICATE_PROBABILITY: f64 = 0.5;

/// Generates `n` queries over connected subgraphs of exactly `complexity`
/// relations. Subgraphs are drawn uniformly from the enumerated connected
/// subsets; thresholds uniformly from the column's active domain.
pub fn generate(db: &Database, complexity: usize, n: usize, seed: u64) -> Result<Vec<Query>> {
    let schema = &db.schema;
    if complexity == 0 || complexity > schema.relations.len() {
        return Err(Error::Unsatisfiable(complexity));
    }
    let subsets = connected_subsets(schema, complexity);
    if subsets.is_empty() {
        return Err(Error::Unsatisfiable(complexity));
    }
    let domains: HashMap<&ColumnRef, Vec<i64>> = schema
        .selection_columns
        .iter()
        .map(|c| Ok((c, active_domain(db, c)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seed::rng_for(seed, &[i as u64]);
        let members = &subsets[rng.random_range(0..subsets.len())];
        let relations: BTreeSet<String> = members
            .iter()
            .map(|&m| schema.relations[m].name.clone())
            .collect();
        let mut selections = Vec::new();
        for &m in members {
            for col in schema.selection_columns_of(&schema.relations[m].name) {
                let take = rng.random_bool(PREDICATE_PROBABILITY);
                let domain = &domains[col];
                if take && !domain.is_empty() {
                    selections.push(Selection {
                        column: col.clone(),
                        threshold: domain[rng.random_range(0..domain.len())],
                    });
                }
            }
        }
        out.push(Query::induced(schema, relations, selections));
    }
    Ok(out)
}

/// A uniformly random valid left-deep order for `q`, deterministic per
/// `(q, seed)`.
pub fn to_sequence(q: &Query, seed: u64) -> Result<JoinSequence> {
    if !q.is_connected() || q.relations.is_empty() {
        return Err(Error::Disconnected);
    }
    let names: Vec<&String> = q.relations.iter().collect();
    let n = names.len();
    if n > 24 {
        return Err(Error::InvalidQuery("too many relations for order sampling".into()));
    }
    let pos = |r: &str| names.iter().position(|x| x.as_str() == r).expect("listed");
    let mut adj = vec![0u32; n];
    for j in &q.joins {
        let (a, b) = (pos(&j.fk.relation), pos(&j.pk.relation));
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let full: u32 = if n == 32 { u32::MAX } else { (1 << n) - 1 };
    let mut memo: HashMap<u32, u128> = HashMap::new();
    fn completions(set: u32, full: u32, adj: &[u32], memo: &mut HashMap<u32, u128>) -> u128 {
        if set == full {
            return 1;
        }
        if let Some(&c) = memo.get(&set) {
            return c;
        }
        let mut total = 0;
        for (r, &a) in adj.iter().enumerate() {
            if set & (1 << r) == 0 && a & set != 0 {
                total += completions(set | (1 << r), full, adj, memo);
            }
        }
        memo.insert(set, total);
        total
    }
    let mut rng = seed::rng_for(seed, &[seed::tag("order")]);
    let mut set = 0u32;
    let mut order = Vec::with_capacity(n);
    while set != full {
        let candidates: Vec<(usize, u128)> = (0..n)
            .filter(|&r| set & (1 << r) == 0 && (set == 0 || adj[r] & set != 0))
            .map(|r| (r, completions(set | (1 << r), full, &adj, &mut memo)))
            .filter(|&(_, c)| c > 0)
            .collect();
        let total: u128 = candidates.iter().map(|c| c.1).sum();
        let mut pick = rng.random_range(0..total);
        let mut chosen = candidates[0].0;
        for &(r, c) in &candidates {
            if pick < c {
                chosen = r;
                break;
            }
            pick -= c;
        }
        set |= 1 << chosen;
        order.push(names[chosen].clone());
    }
    JoinSequence::from_order(q, &order)
}

/// Pairs each query with a random left-deep order; query `i` uses the
/// sub-seed `(seed, i)`.
pub fn sequenced(queries: Vec<Query>, seed: u64) -> Result<Vec<(Query, JoinSequence)>> {
    queries
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let s = to_sequence(&q, seed::derive(seed, &[i as u64]))?;
            Ok((q, s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub query: Query,
    pub sequence: JoinSequence,
    pub cardinality: u64,
    pub selectivity: f64,
    /// One entry per sequence step when labeled with prefixes, else empty.
    pub prefix_selectivities: Vec<f64>,
    pub prefix_cardinalities: Vec<u64>,
}

fn selectivity(cardinality: u64, cartesian: f64) -> f64 {
    if cartesian <= 0.0 {
        0.0
    } else {
        (cardinality as f64 / cartesian).clamp(0.0, 1.0)
    }
}

pub fn label_one(db: &Database, q: &Query, seq: &JoinSequence, with_prefixes: bool) -> Result<LabeledExample> {
    q.validate(&db.schema)?;
    if seq.to_query().relations != q.relations {
        return Err(Error::InvalidQuery("sequence does not match its query".into()));
    }
    let (cardinality, prefix_cardinalities, prefix_selectivities) = if with_prefixes {
        let counts = exec::prefix_cardinalities(db, seq)?;
        let sels = counts
            .iter()
            .enumerate()
            .map(|(t, &c)| Ok(selectivity(c, seq.prefix_query(t + 1).cartesian_size(db)?)))
            .collect::<Result<Vec<_>>>()?;
        (*counts.last().expect("nonempty sequence"), counts, sels)
    } else {
        (exec::cardinality(db, q)?, Vec::new(), Vec::new())
    };
    Ok(LabeledExample {
        query: q.clone(),
        sequence: seq.clone(),
        cardinality,
        selectivity: selectivity(cardinality, q.cartesian_size(db)?),
        prefix_selectivities,
        prefix_cardinalities,
    })
}

/// Labels every item with exact cardinalities; runs in parallel and keeps
/// input order.
pub fn label(db: &Database, items: &[(Query, JoinSequence)], with_prefixes: bool) -> Result<Vec<LabeledExample>> {
    items
        .par_iter()
        .map(|(q, s)| label_one(db, q, s, with_prefixes))
        .collect()
}

/// One labeled example per sequence prefix (the last one is the full query).
pub fn expand_subqueries(db: &Database, ex: &LabeledExample) -> Result<Vec<LabeledExample>> {
    if ex.prefix_cardinalities.len() != ex.sequence.len() {
        return Err(Error::InvalidArgument("example was labeled without prefixes".into()));
    }
    (1..=ex.sequence.len())
        .map(|t| {
            let sequence = ex.sequence.prefix(t);
            let query = sequence.to_query();
            let cardinality = ex.prefix_cardinalities[t - 1];
            Ok(LabeledExample {
                selectivity: selectivity(cardinality, query.cartesian_size(db)?),
                query,
                sequence,
                cardinality,
                prefix_selectivities: ex.prefix_selectivities[..t].to_vec(),
                prefix_cardinalities: ex.prefix_cardinalities[..t].to_vec(),
            })
        })
        .collect()
}

/// Seeded disjoint split; both halves keep input order.
pub fn split<T>(examples: Vec<T>, test_n: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if test_n >= examples.len() && test_n > 0 {
        return Err(Error::InvalidArgument(format!(
            "test size {test_n} must be smaller than the {} examples",
            examples.len()
        )));
    }
    let mut rng = seed::rng_for(seed, &[seed::tag("split")]);
    let chosen: BTreeSet<usize> = index::sample(&mut rng, examples.len(), test_n).into_iter().collect();
    let mut train = Vec::with_capacity(examples.len() - test_n);
    let mut test = Vec::with_capacity(test_n);
    for (i, e) in examples.into_iter().enumerate() {
        if chosen.contains(&i) {
            test.push(e);
        } else {
            train.push(e);
        }
    }
    Ok((train, test))
}

/// The active-domain values of `column` chosen for hold-out at `fraction`
/// (rounded up).
pub fn held_out_values(db: &Database, column: &ColumnRef, fraction: f64, seed: u64) -> Result<BTreeSet<i64>> {
    if !db.schema.is_selection_column(column) {
        return Err(Error::UnknownColumn(column.to_string()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0,1]")));
    }
    let domain = active_domain(db, column)?;
    // Absorb representation error such as 0.1 * 20 = 2.0000000000000004.
    let k = ((fraction * domain.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = seed::rng_for(seed, &[seed::tag("remove-selection")]);
    Ok(index::sample(&mut rng, domain.len(), k.min(domain.len()))
        .into_iter()
        .map(|i| domain[i])
        .collect())
}

/// Moves every example whose predicate on `column` uses a held-out value to
/// the second list.
pub fn remove_selection_values(
    examples: &[LabeledExample],
    db: &Database,
    column: &ColumnRef,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let chosen = held_out_values(db, column, fraction, seed)?;
    Ok(examples.iter().cloned().partition(|e| {
        !e.query
            .selections
            .iter()
            .any(|s| s.column == *column && chosen.contains(&s.threshold))
    }))
}

pub fn remove_join(
    examples: &[LabeledExample],
    relation_set: &BTreeSet<String>,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if relation_set.is_empty() {
        return Err(Error::InvalidArgument("empty relation set".into()));
    }
    Ok(examples
        .iter()
        .cloned()
        .partition(|e| e.query.relations != *relation_set))
}

/// One line of a workload file. Unlabeled workloads leave the label fields
/// null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub relations: Vec<String>,
    pub joins: Vec<JoinEdge>,
    pub selections: Vec<Selection>,
    pub order: Vec<String>,
    pub cardinality: Option<u64>,
    pub selectivity: Option<f64>,
    #[serde(default)]
    pub prefix_selectivities: Vec<f64>,
    #[serde(default)]
    pub prefix_cardinalities: Vec<u64>,
}

impl WorkloadRecord {
    pub fn unlabeled(q: &Query, seq: &JoinSequence) -> Self {
        WorkloadRecord {
            relations: q.relations.iter().cloned().collect(),
            joins: q.joins.iter().cloned().collect(),
            selections: q.selections.clone(),
            order: seq.order(),
            cardinality: None,
            selectivity: None,
            prefix_selectivities: Vec::new(),
            prefix_cardinalities: Vec::new(),
        }
    }

    pub fn labeled(ex: &LabeledExample) -> Self {
        WorkloadRecord {
            cardinality: Some(ex.cardinality),
            selectivity: Some(ex.selectivity),
            prefix_selectivities: ex.prefix_selectivities.clone(),
            prefix_cardinalities: ex.prefix_cardinalities.clone(),
            ..Self::unlabeled(&ex.query, &ex.sequence)
        }
    }

    pub fn query(&self) -> Query {
        Query {
            relations: self.relations.iter().cloned().collect(),
            joins: self.joins.iter().cloned().collect(),
            selections: self.selections.clone(),
        }
    }

    pub fn item(&self) -> Result<(Query, JoinSequence)> {
        let q = self.query();
        let seq = JoinSequence::from_order(&q, &self.order)?;
        Ok((q, seq))
    }

    pub fn example(&self) -> Result<LabeledExample> {
        let (query, sequence) = self.item()?;
        let (Some(cardinality), Some(selectivity)) = (self.cardinality, self.selectivity) else {
            return Err(Error::InvalidArgument("workload record is unlabeled".into()));
        };
        Ok(LabeledExample {
            query,
            sequence,
            cardinality,
            selectivity,
            prefix_selectivities: self.prefix_selectivities.clone(),
            prefix_cardinalities: self.prefix_cardinalities.clone(),
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[WorkloadRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<WorkloadRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::relstore::generate_synthetic;
    use std::collections::BTreeMap;

    pub(crate) fn running_schema() -> DatabaseSchema {
        DatabaseSchema::from_json(include_str!("../../../configs/schemas/running.json")).unwrap()
    }

    pub(crate) fn running_db(rows: usize, seed: u64) -> Database {
        let schema = running_schema();
        let counts: BTreeMap<String, usize> = schema.relations.iter().map(|r| (r.name.clone(), rows)).collect();
        generate_synthetic(&schema, &counts, seed).unwrap()
    }

    fn names(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_relation_queries() {
        let db = running_db(50, 1);
        let qs = generate(&db, 1, 3, 9).unwrap();
        assert_eq!(qs.len(), 3);
        for q in &qs {
            assert_eq!(q.relations.len(), 1);
            assert!(q.joins.is_empty());
            q.validate(&db.schema).unwrap();
        }
    }

    #[test]
    fn two_join_respects_connectivity() {
        let db = running_db(50, 1);
        for q in generate(&db, 2, 200, 4).unwrap() {
            assert!(q.relations == names(&["A", "B"]) || q.relations == names(&["B", "C"]));
            assert_eq!(q.joins.len(), 1);
        }
        assert!(matches!(generate(&db, 4, 1, 0), Err(Error::Unsatisfiable(4))));
    }

    #[test]
    fn generation_is_deterministic() {
        let db = running_db(50, 1);
        assert_eq!(generate(&db, 3, 100, 5).unwrap(), generate(&db, 3, 100, 5).unwrap());
        assert_ne!(generate(&db, 3, 100, 5).unwrap(), generate(&db, 3, 100, 6).unwrap());
    }

    #[test]
    fn sequences_for_small_queries() {
        let schema = running_schema();
        let q = Query::induced(&schema, names(&["A"]), vec![]);
        let s = to_sequence(&q, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.steps[0].joins.is_empty());

        let q = Query::induced(&schema, names(&["A", "B"]), vec![]);
        let mut orders = BTreeSet::new();
        for seed in 0..64 {
            let s = to_sequence(&q, seed).unwrap();
            s.validate(&schema).unwrap();
            orders.insert(s.order());
        }
        assert_eq!(orders.len(), 2);
    }

    #[test]
    fn three_chain_orders_are_uniform() {
        // A-B-C admits exactly 4 left-deep orders: ABC, BAC, BCA, CBA.
        let schema = running_schema();
        let q = Query::induced(&schema, names(&["A", "B", "C"]), vec![]);
        let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for seed in 0..4000 {
            *counts.entry(to_sequence(&q, seed).unwrap().order()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        for (order, c) in counts {
            assert!((c as f64 / 4000.0 - 0.25).abs() < 0.03, "{order:?} {c}");
        }
    }

    #[test]
    fn chain_sequence_has_one_predicate_per_step() {
        let schema = DatabaseSchema::from_json(include_str!("../../../configs/schemas/chain.json")).unwrap();
        let q = Query::induced(&schema, schema.relations.iter().map(|r| r.name.clone()).collect(), vec![]);
        for seed in 0..20 {
            let s = to_sequence(&q, seed).unwrap();
            assert_eq!(s.len(), 6);
            for step in &s.steps[1..] {
                assert_eq!(step.joins.len(), 1);
            }
        }
    }

    #[test]
    fn label_forced_values() {
        let schema = running_schema();
        let counts: BTreeMap<String, usize> = [("A", 100), ("B", 50), ("C", 20)]
            .iter()
            .map(|(n, c)| (n.to_string(), *c))
            .collect();
        let db = generate_synthetic(&schema, &counts, 3).unwrap();
        let q = Query::induced(&schema, names(&["A", "B"]), vec![]);
        let seq = to_sequence(&q, 0).unwrap();
        let ex = label(&db, &[(q, seq)], true).unwrap().remove(0);
        assert_eq!(ex.cardinality, 100);
        assert!((ex.selectivity - 0.02).abs() < 1e-15);
        assert_eq!(ex.prefix_selectivities.len(), 2);

        let max = *active_domain(&db, &ColumnRef::new("A", "a1")).unwrap().last().unwrap();
        let q = Query::single("A", vec![Selection { column: ColumnRef::new("A", "a1"), threshold: max }]);
        let seq = to_sequence(&q, 0).unwrap();
        let ex = label(&db, &[(q, seq)], false).unwrap().remove(0);
        assert_eq!(ex.selectivity, 1.0);
        assert!(ex.prefix_selectivities.is_empty());
    }

    #[test]
    fn split_examples() {
        let (train, test) = split((0..10).collect::<Vec<_>>(), 0, 1).unwrap();
        assert_eq!(train.len(), 10);
        assert!(test.is_empty());
        assert!(split((0..10).collect::<Vec<_>>(), 10, 1).is_err());
        let (train, test) = split((0..100).collect::<Vec<_>>(), 10, 1).unwrap();
        assert_eq!((train.len(), test.len()), (90, 10));
        assert!(train.iter().all(|x| !test.contains(x)));
        assert_eq!(split((0..100).collect::<Vec<_>>(), 10, 1).unwrap().1, test);
    }

    fn labeled_batch(db: &Database, n: usize, seed: u64) -> Vec<LabeledExample> {
        let mut qs = generate(db, 1, n, seed).unwrap();
        qs.extend(generate(db, 2, n, seed + 1).unwrap());
        label(db, &sequenced(qs, seed).unwrap(), false).unwrap()
    }

    #[test]
    fn remove_selection_extremes_and_partition() {
        let db = running_db(200, 2);
        let col = ColumnRef::new("A", "a1");
        let batch = labeled_batch(&db, 60, 3);
        let (kept, held) = remove_selection_values(&batch, &db, &col, 0.0, 1).unwrap();
        assert!(held.is_empty());
        assert_eq!(kept.len(), batch.len());
        let (kept, held) = remove_selection_values(&batch, &db, &col, 1.0, 1).unwrap();
        let with_pred = batch.iter().filter(|e| e.query.selections.iter().any(|s| s.column == col)).count();
        assert_eq!(held.len(), with_pred);
        assert!(kept.iter().all(|e| e.query.selections.iter().all(|s| s.column != col)));
        assert!(matches!(
            remove_selection_values(&batch, &db, &ColumnRef::new("A", "a2"), 0.1, 1),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn remove_selection_ten_percent_of_twenty() {
        let mut schema = running_schema();
        // a1 uniform over 1..=20 so the active domain has 20 values.
        schema.relations[0].columns[0].generator = Some(crate::relstore::Generator::Uniform { lo: 1, hi: 20 });
        let counts: BTreeMap<String, usize> = schema.relations.iter().map(|r| (r.name.clone(), 500)).collect();
        let db = generate_synthetic(&schema, &counts, 5).unwrap();
        let col = ColumnRef::new("A", "a1");
        assert_eq!(active_domain(&db, &col).unwrap().len(), 20);
        let chosen = held_out_values(&db, &col, 0.10, 8).unwrap();
        assert_eq!(chosen.len(), 2);
        let batch = labeled_batch(&db, 150, 9);
        let (kept, held) = remove_selection_values(&batch, &db, &col, 0.10, 8).unwrap();
        let expect_held: Vec<_> = batch
            .iter()
            .filter(|e| e.query.selections.iter().any(|s| s.column == col && chosen.contains(&s.threshold)))
            .cloned()
            .collect();
        assert_eq!(held, expect_held);
        assert_eq!(kept.len() + held.len(), batch.len());
    }

    #[test]
    fn remove_join_cases() {
        let db = running_db(100, 2);
        let batch = labeled_batch(&db, 40, 1);
        let (kept, held) = remove_join(&batch, &names(&["A", "C"])).unwrap();
        assert!(held.is_empty());
        assert_eq!(kept.len(), batch.len());
        let ab = names(&["A", "B"]);
        let (kept, held) = remove_join(&batch, &ab).unwrap();
        assert_eq!(held.len(), batch.iter().filter(|e| e.query.relations == ab).count());
        assert!(kept.iter().all(|e| e.query.relations != ab));
        let only: Vec<_> = held.clone();
        let (k2, h2) = remove_join(&only, &ab).unwrap();
        assert!(k2.is_empty());
        assert_eq!(h2.len(), only.len());
        assert!(remove_join(&batch, &BTreeSet::new()).is_err());
    }

    #[test]
    fn records_round_trip() {
        let db = running_db(60, 2);
        let qs = generate(&db, 3, 5, 1).unwrap();
        let labeled = label(&db, &sequenced(qs, 2).unwrap(), true).unwrap();
        let records: Vec<_> = labeled.iter().map(WorkloadRecord::labeled).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        let examples: Vec<_> = back.iter().map(|r| r.example().unwrap()).collect();
        assert_eq!(examples, labeled);
    }
}
