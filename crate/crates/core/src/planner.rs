//! Left-deep join ordering by dynamic programming over connected relation
//! subsets, under the C_out cost model (sum of intermediate result sizes).
//! Used to measure how estimation errors translate into plan quality.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Estimator, TruthEstimator};
use crate::exec;
use crate::relstore::Database;
use crate::workload::{JoinSequence, Query};

/// Relations beyond this make the subset DP impractical.
pub const MAX_RELATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeftDeepPlan {
    pub order: Vec<String>,
    /// Estimated cardinality of each prefix, length 1 upwards.
    pub prefix_estimates: Vec<f64>,
    /// Σ of `prefix_estimates` over prefixes of length ≥ 2.
    pub estimated_cost: f64,
}

impl LeftDeepPlan {
    pub fn sequence(&self, q: &Query) -> Result<JoinSequence> {
        JoinSequence::from_order(q, &self.order)
    }
}

#[derive(Clone)]
struct Partial {
    cost: f64,
    first: f64,
    order: Vec<usize>,
}

/// Plan preference: lower cost, then the smaller estimated first input, then
/// the lexicographically smaller relation order.
fn prefer(a: &Partial, b: &Partial) -> Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.first.total_cmp(&b.first))
        .then_with(|| a.order.cmp(&b.order))
}

struct Scorer<'a> {
    q: &'a Query,
    names: Vec<&'a String>,
    est: &'a dyn Estimator,
    cache: HashMap<u32, f64>,
}

impl Scorer<'_> {
    fn subset(&self, mask: u32) -> BTreeSet<String> {
        (0..self.names.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.names[i].clone()).collect()
    }

    fn score(&mut self, mask: u32) -> Result<f64> {
        if let Some(&v) = self.cache.get(&mask) {
            return Ok(v);
        }
        let v = self.est.estimate(&self.q.subquery(&self.subset(mask)))?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "estimator `{}` returned a non-finite estimate",
                self.est.name()
            )));
        }
        self.cache.insert(mask, v);
        Ok(v)
    }
}

fn adjacency(q: &Query, names: &[&String]) -> Vec<u32> {
    let pos = |r: &String| names.iter().position(|n| *n == r).expect("join relation in query");
    let mut adj = vec![0u32; names.len()];
    for j in &q.joins {
        let (a, b) = (pos(&j.fk.relation), pos(&j.pk.relation));
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    adj
}

/// The cheapest left-deep order under `est`, scoring every connected subset
/// once through the estimator.
pub fn best_plan(q: &Query, est: &dyn Estimator) -> Result<LeftDeepPlan> {
    let n = q.relations.len();
    if n == 0 || n > MAX_RELATIONS {
        return Err(Error::InvalidQuery(format!("cannot plan a query over {n} relations")));
    }
    if !q.is_connected() {
        return Err(Error::Disconnected);
    }
    let names: Vec<&String> = q.relations.iter().collect();
    let adj = adjacency(q, &names);
    let mut scorer = Scorer { q, names, est, cache: HashMap::new() };
    let full = (1u32 << n) - 1;
    let mut best: HashMap<u32, Partial> = HashMap::new();
    for i in 0..n {
        let first = scorer.score(1 << i)?;
        best.insert(1 << i, Partial { cost: 0.0, first, order: vec![i] });
    }
    // Masks in increasing popcount so every predecessor is final.
    let mut masks: Vec<u32> = (1..=full).filter(|m| m.count_ones() >= 2).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let mut winner: Option<Partial> = None;
        for r in 0..n {
            let rest = mask & !(1 << r);
            if mask >> r & 1 == 0 || adj[r] & rest == 0 {
                continue;
            }
            let Some(prev) = best.get(&rest) else { continue };
            let card = scorer.score(mask)?;
            let mut order = prev.order.clone();
            order.push(r);
            let cand = Partial { cost: prev.cost + card, first: prev.first, order };
            if winner.as_ref().is_none_or(|w| prefer(&cand, w) == Ordering::Less) {
                winner = Some(cand);
            }
        }
        if let Some(w) = winner {
            best.insert(mask, w);
        }
    }
    let plan = best.remove(&full).ok_or(Error::Disconnected)?;
    let mut prefix_estimates = Vec::with_capacity(n);
    let mut mask = 0u32;
    for &i in &plan.order {
        mask |= 1 << i;
        prefix_estimates.push(scorer.score(mask)?);
    }
    Ok(LeftDeepPlan {
        order: plan.order.iter().map(|&i| scorer.names[i].clone()).collect(),
        prefix_estimates,
        estimated_cost: plan.cost,
    })
}

/// True C_out of executing `q` in the given order.
pub fn true_cost(db: &Database, q: &Query, order: &[String]) -> Result<f64> {
    let seq = JoinSequence::from_order(q, order)?;
    let prefixes = exec::prefix_cardinalities(db, &seq)?;
    Ok(prefixes.iter().skip(1).map(|&c| c as u128).sum::<u128>() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub query_id: usize,
    pub chosen_cost: f64,
    pub optimal_cost: f64,
    /// `max(chosen, 1) / max(optimal, 1)`.
    pub ratio: f64,
    pub estimator: String,
}

/// True cost of the plan chosen with `est` against the true cost of the plan
/// chosen with exact cardinalities.
pub fn impact(db: &Database, query_id: usize, q: &Query, est: &dyn Estimator) -> Result<ImpactRecord> {
    let truth = TruthEstimator { db };
    let optimal = best_plan(q, &truth)?;
    let chosen = best_plan(q, est)?;
    let optimal_cost = optimal.estimated_cost;
    let chosen_cost = true_cost(db, q, &chosen.order)?;
    Ok(ImpactRecord {
        query_id,
        chosen_cost,
        optimal_cost,
        ratio: chosen_cost.max(1.0) / optimal_cost.max(1.0),
        estimator: est.name().to_string(),
    })
}

pub fn write_impact_csv<W: Write>(mut w: W, records: &[ImpactRecord]) -> Result<()> {
    writeln!(w, "# cost model: C_out (sum of intermediate result sizes); ratio = max(chosen, 1) / max(optimal, 1)")?;
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["query_id", "chosen_cost", "optimal_cost", "ratio", "estimator"])?;
    for r in records {
        out.write_record([
            r.query_id.to_string(),
            format!("{:?}", r.chosen_cost),
            format!("{:?}", r.optimal_cost),
            format!("{:?}", r.ratio),
            r.estimator.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
