//! Exact SPJ counting: the labeling oracle.
//!
//! Each relation is filtered by its selections, then joined in a connected
//! order with hash joins. Intermediate results are kept grouped by the
//! columns later join predicates still need, with a multiplicity per group,
//! so only counts are ever materialized.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::relstore::{ColumnRef, Database};
use crate::workload::{JoinSequence, Query};

/// Guard on the cartesian product size accepted by [`cardinality_naive`].
pub const NAIVE_LIMIT: u128 = 100_000_000;

struct Resolved<'a> {
    names: Vec<&'a str>,
    /// Row ids passing each relation's selections.
    filtered: Vec<Vec<usize>>,
    /// Column slices by (relation position, column name).
    db: &'a Database,
}

impl<'a> Resolved<'a> {
    fn new(db: &'a Database, q: &'a Query) -> Result<Self> {
        q.validate(&db.schema)?;
        let names: Vec<&str> = q.relations.iter().map(String::as_str).collect();
        let mut filtered = Vec::with_capacity(names.len());
        for name in &names {
            let rel = db.relation(name).ok_or_else(|| Error::UnknownRelation(name.to_string()))?;
            let preds: Vec<(&[i64], i64)> = q
                .selections_on(name)
                .map(|s| Ok((db.column(&s.column)?, s.threshold)))
                .collect::<Result<_>>()?;
            filtered.push(
                (0..rel.row_count)
                    .filter(|&i| preds.iter().all(|(col, t)| col[i] <= *t))
                    .collect(),
            );
        }
        Ok(Resolved { names, filtered, db })
    }

    fn pos(&self, relation: &str) -> usize {
        self.names.iter().position(|n| *n == relation).expect("validated")
    }

    fn column(&self, c: &ColumnRef) -> Result<&'a [i64]> {
        self.db.column(c)
    }
}

fn mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b).ok_or(Error::Overflow)
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b).ok_or(Error::Overflow)
}

/// Joins relations in `order` (positions into `r.names`) and returns the
/// exact count after each step.
fn run_order(r: &Resolved, q: &Query, order: &[usize]) -> Result<Vec<u64>> {
    let n = order.len();
    let mut joined: BTreeSet<usize> = BTreeSet::new();
    // Columns of joined relations still referenced by a join predicate to an
    // unjoined relation.
    let live_after = |joined: &BTreeSet<usize>| -> Vec<ColumnRef> {
        let mut cols: Vec<ColumnRef> = Vec::new();
        for j in &q.joins {
            let a = r.pos(&j.fk.relation);
            let b = r.pos(&j.pk.relation);
            for (inside, outside, col) in [(a, b, &j.fk), (b, a, &j.pk)] {
                if joined.contains(&inside) && !joined.contains(&outside) && !cols.contains(col) {
                    cols.push(col.clone());
                }
            }
        }
        cols
    };

    let mut counts = Vec::with_capacity(n);
    let first = order[0];
    joined.insert(first);
    let mut live = live_after(&joined);
    let mut groups: HashMap<Vec<i64>, u64> = HashMap::new();
    {
        let cols: Vec<&[i64]> = live.iter().map(|c| r.column(c)).collect::<Result<_>>()?;
        for &row in &r.filtered[first] {
            let key: Vec<i64> = cols.iter().map(|c| c[row]).collect();
            *groups.entry(key).or_insert(0) += 1;
        }
    }
    counts.push(r.filtered[first].len() as u64);

    for &next in &order[1..] {
        let name = r.names[next];
        // Predicates linking `next` to the joined set: (intermediate column, next's column).
        let mut probe: Vec<(usize, &ColumnRef)> = Vec::new();
        for j in &q.joins {
            let (mine, theirs) = if j.fk.relation == name {
                (&j.fk, &j.pk)
            } else if j.pk.relation == name {
                (&j.pk, &j.fk)
            } else {
                continue;
            };
            if joined.contains(&r.pos(&theirs.relation)) {
                let at = live.iter().position(|c| c == theirs).expect("live column");
                probe.push((at, mine));
            }
        }
        if probe.is_empty() {
            return Err(Error::Disconnected);
        }
        joined.insert(next);
        let new_live = live_after(&joined);
        // Build side: group `next`'s filtered rows by probe key, then by the
        // columns of `next` that stay live.
        let key_cols: Vec<&[i64]> = probe.iter().map(|(_, c)| r.column(c)).collect::<Result<_>>()?;
        let carry: Vec<&ColumnRef> = new_live.iter().filter(|c| c.relation == name).collect();
        let carry_cols: Vec<&[i64]> = carry.iter().map(|c| r.column(c)).collect::<Result<_>>()?;
        let mut build: HashMap<Vec<i64>, HashMap<Vec<i64>, u64>> = HashMap::new();
        for &row in &r.filtered[next] {
            let key: Vec<i64> = key_cols.iter().map(|c| c[row]).collect();
            let val: Vec<i64> = carry_cols.iter().map(|c| c[row]).collect();
            *build.entry(key).or_default().entry(val).or_insert(0) += 1;
        }
        // Layout of the next intermediate: each new live column comes either
        // from the old intermediate or from the carried columns of `next`.
        enum Src {
            Old(usize),
            New(usize),
        }
        let layout: Vec<Src> = new_live
            .iter()
            .map(|c| match live.iter().position(|l| l == c) {
                Some(i) => Src::Old(i),
                None => Src::New(carry.iter().position(|k| *k == c).expect("carried")),
            })
            .collect();
        let mut next_groups: HashMap<Vec<i64>, u64> = HashMap::new();
        let mut total = 0u64;
        let mut probe_key = Vec::with_capacity(probe.len());
        for (vals, &cnt) in &groups {
            probe_key.clear();
            probe_key.extend(probe.iter().map(|(at, _)| vals[*at]));
            let Some(matches) = build.get(&probe_key) else {
                continue;
            };
            for (carried, &m) in matches {
                let c = mul(cnt, m)?;
                total = add(total, c)?;
                let key: Vec<i64> = layout
                    .iter()
                    .map(|s| match s {
                        Src::Old(i) => vals[*i],
                        Src::New(i) => carried[*i],
                    })
                    .collect();
                let e = next_groups.entry(key).or_insert(0);
                *e = add(*e, c)?;
            }
        }
        counts.push(total);
        groups = next_groups;
        live = new_live;
    }
    Ok(counts)
}

/// Greedy connected order: smallest filtered relation first, then always
/// the smallest connected candidate (ties by relation name).
fn greedy_order(r: &Resolved, q: &Query) -> Vec<usize> {
    let n = r.names.len();
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let start = (0..n).min_by_key(|&i| (r.filtered[i].len(), i)).expect("nonempty");
    order.push(start);
    used[start] = true;
    while order.len() < n {
        let next = (0..n)
            .filter(|&i| !used[i])
            .filter(|&i| {
                q.joins.iter().any(|j| {
                    j.other(r.names[i])
                        .is_some_and(|o| used[r.pos(o)])
                })
            })
            .min_by_key(|&i| (r.filtered[i].len(), i))
            .expect("connected query");
        used[next] = true;
        order.push(next);
    }
    order
}

/// Exact number of tuples produced by `q` over `db`.
pub fn cardinality(db: &Database, q: &Query) -> Result<u64> {
    let r = Resolved::new(db, q)?;
    let order = greedy_order(&r, q);
    Ok(*run_order(&r, q, &order)?.last().expect("nonempty"))
}

/// Exact count of each prefix subquery of `seq`.
pub fn prefix_cardinalities(db: &Database, seq: &JoinSequence) -> Result<Vec<u64>> {
    seq.validate(&db.schema)?;
    let q = seq.to_query();
    let r = Resolved::new(db, &q)?;
    let order: Vec<usize> = seq.steps.iter().map(|s| r.pos(&s.relation)).collect();
    run_order(&r, &q, &order)
}

/// Nested-loop evaluation over the full cartesian product. Independent of
/// [`cardinality`]; only for tiny inputs.
pub fn cardinality_naive(db: &Database, q: &Query) -> Result<u64> {
    q.validate(&db.schema)?;
    let names: Vec<&str> = q.relations.iter().map(String::as_str).collect();
    let sizes: Vec<usize> = names
        .iter()
        .map(|n| db.row_count(n))
        .collect::<Result<_>>()?;
    let product: u128 = sizes.iter().map(|&s| s as u128).product();
    if product > NAIVE_LIMIT {
        return Err(Error::SizeGuard(product));
    }
    if product == 0 {
        return Ok(0);
    }
    let pos = |rel: &str| names.iter().position(|n| *n == rel).expect("validated");
    let sels: Vec<(usize, &[i64], i64)> = q
        .selections
        .iter()
        .map(|s| Ok((pos(&s.column.relation), db.column(&s.column)?, s.threshold)))
        .collect::<Result<_>>()?;
    let joins: Vec<(usize, &[i64], usize, &[i64])> = q
        .joins
        .iter()
        .map(|j| {
            Ok((
                pos(&j.fk.relation),
                db.column(&j.fk)?,
                pos(&j.pk.relation),
                db.column(&j.pk)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut idx = vec![0usize; names.len()];
    let mut count = 0u64;
    loop {
        let ok = sels.iter().all(|(p, col, t)| col[idx[*p]] <= *t)
            && joins.iter().all(|(a, ca, b, cb)| ca[idx[*a]] == cb[idx[*b]]);
        if ok {
            count += 1;
        }
        // odometer
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(count);
            }
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
