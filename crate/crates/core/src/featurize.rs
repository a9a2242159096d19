//! Query encodings and the label transform.
//!
//! A flat encoding concatenates three segments: a one-hot over relations,
//! one slot per attribute of every relation holding the predicate's
//! percentile (1 when the referenced attribute is unfiltered, 0 when its
//! relation is absent), and a one-hot over join predicates. Sequence
//! encodings apply the same layout per left-deep step.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relstore::{ColumnRef, Database, JoinEdge};
use crate::workload::{JoinSequence, Query, Selection};

/// Minimum selectivity before the log transform.
pub const SELECTIVITY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMode {
    /// Fraction of distinct active-domain values ≤ v.
    #[default]
    Distinct,
    /// Fraction of tuples with value ≤ v.
    Frequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainCdf {
    pub values: Vec<i64>,
    /// Tuples with value ≤ `values[i]`.
    pub cumulative: Vec<u64>,
}

impl DomainCdf {
    fn from_column(col: &[i64]) -> Self {
        let mut sorted = col.to_vec();
        sorted.sort_unstable();
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if values.last() == Some(&v) {
                *cumulative.last_mut().expect("paired") = i as u64 + 1;
            } else {
                values.push(v);
                cumulative.push(i as u64 + 1);
            }
        }
        DomainCdf { values, cumulative }
    }

    pub fn percentile(&self, value: i64, mode: PercentileMode) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let k = self.values.partition_point(|&v| v <= value);
        match mode {
            PercentileMode::Distinct => k as f64 / self.values.len() as f64,
            PercentileMode::Frequency => {
                if k == 0 {
                    0.0
                } else {
                    self.cumulative[k - 1] as f64 / *self.cumulative.last().expect("nonempty") as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSpec {
    pub relation_order: Vec<String>,
    pub attribute_order: Vec<ColumnRef>,
    pub join_order: Vec<JoinEdge>,
    pub domain_cdfs: HashMap<ColumnRef, DomainCdf>,
    pub mode: PercentileMode,
    relation_index: HashMap<String, usize>,
    attribute_index: HashMap<ColumnRef, usize>,
    join_index: HashMap<JoinEdge, usize>,
    /// Attribute slots of each relation, by relation position.
    attributes_of: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub steps: Vec<FeatureVector>,
}

impl EncodingSpec {
    pub fn width(&self) -> usize {
        self.relation_order.len() + self.attribute_order.len() + self.join_order.len()
    }

    fn attribute_offset(&self) -> usize {
        self.relation_order.len()
    }

    fn join_offset(&self) -> usize {
        self.relation_order.len() + self.attribute_order.len()
    }

    fn relation_pos(&self, name: &str) -> Result<usize> {
        self.relation_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    fn join_pos(&self, j: &JoinEdge) -> Result<usize> {
        self.join_index
            .get(j)
            .copied()
            .ok_or_else(|| Error::InvalidQuery(format!("unknown join `{j}`")))
    }

    /// Writes one relation's slice of the selection segment: percentiles for
    /// predicated attributes, 1 for the rest.
    fn fill_relation<'a>(
        &self,
        out: &mut [f64],
        relation: &str,
        selections: impl Iterator<Item = &'a Selection>,
    ) -> Result<()> {
        let r = self.relation_pos(relation)?;
        let base = self.attribute_offset();
        for &a in &self.attributes_of[r] {
            out[base + a] = 1.0;
        }
        for s in selections {
            let slot = self
                .attribute_index
                .get(&s.column)
                .ok_or_else(|| Error::UnknownColumn(s.column.to_string()))?;
            if s.column.relation != relation {
                return Err(Error::InvalidQuery(format!("`{}` is not in `{relation}`", s.column)));
            }
            out[base + slot] = percentile(self, &s.column, s.threshold)?;
        }
        Ok(())
    }
}

/// Fixed encoding layout for `db` in schema declaration order.
pub fn build_spec(db: &Database) -> Result<EncodingSpec> {
    build_spec_with(db, PercentileMode::Distinct)
}

pub fn build_spec_with(db: &Database, mode: PercentileMode) -> Result<EncodingSpec> {
    let schema = &db.schema;
    let relation_order: Vec<String> = schema.relations.iter().map(|r| r.name.clone()).collect();
    let mut attribute_order = Vec::new();
    let mut attributes_of = Vec::new();
    for r in &schema.relations {
        let mut slots = Vec::new();
        for c in &r.columns {
            slots.push(attribute_order.len());
            attribute_order.push(ColumnRef::new(&r.name, &c.name));
        }
        attributes_of.push(slots);
    }
    let join_order = schema.join_edges.clone();
    let domain_cdfs = schema
        .selection_columns
        .iter()
        .map(|c| Ok((c.clone(), DomainCdf::from_column(db.column(c)?))))
        .collect::<Result<_>>()?;
    Ok(EncodingSpec {
        relation_index: relation_order.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect(),
        attribute_index: attribute_order.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect(),
        join_index: join_order.iter().enumerate().map(|(i, j)| (j.clone(), i)).collect(),
        relation_order,
        attribute_order,
        join_order,
        domain_cdfs,
        mode,
        attributes_of,
    })
}

pub fn percentile(spec: &EncodingSpec, column: &ColumnRef, value: i64) -> Result<f64> {
    spec.domain_cdfs
        .get(column)
        .map(|cdf| cdf.percentile(value, spec.mode))
        .ok_or_else(|| Error::UnknownColumn(column.to_string()))
}

pub fn encode_flat(spec: &EncodingSpec, q: &Query) -> Result<FeatureVector> {
    let mut values = vec![0.0; spec.width()];
    for r in &q.relations {
        values[spec.relation_pos(r)?] = 1.0;
        spec.fill_relation(&mut values, r, q.selections_on(r))?;
    }
    if let Some(s) = q.selections.iter().find(|s| !q.relations.contains(&s.column.relation)) {
        return Err(Error::InvalidQuery(format!("`{}` is on an unreferenced relation", s.column)));
    }
    let off = spec.join_offset();
    for j in &q.joins {
        values[off + spec.join_pos(j)?] = 1.0;
    }
    Ok(FeatureVector { values })
}

pub fn encode_sequence(spec: &EncodingSpec, seq: &JoinSequence) -> Result<FeatureSequence> {
    let off = spec.join_offset();
    let steps = seq
        .steps
        .iter()
        .map(|step| {
            let mut values = vec![0.0; spec.width()];
            values[spec.relation_pos(&step.relation)?] = 1.0;
            spec.fill_relation(&mut values, &step.relation, step.selections.iter())?;
            for j in &step.joins {
                values[off + spec.join_pos(j)?] = 1.0;
            }
            Ok(FeatureVector { values })
        })
        .collect::<Result<_>>()?;
    Ok(FeatureSequence { steps })
}

/// Writes one CSV row per vector, for debugging.
pub fn dump_csv<W: Write>(mut w: W, spec: &EncodingSpec, vectors: &[FeatureVector]) -> Result<()> {
    let header: Vec<String> = spec
        .relation_order
        .iter()
        .map(|r| format!("rel:{r}"))
        .chain(spec.attribute_order.iter().map(|a| format!("sel:{a}")))
        .chain(spec.join_order.iter().map(|j| format!("join:{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for v in vectors {
        let row: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Standardized log-selectivity: `(ln(max(s, floor)) − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelTransform {
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
}

impl LabelTransform {
    pub fn fit(selectivities: &[f64]) -> Result<Self> {
        Self::fit_with_floor(selectivities, SELECTIVITY_FLOOR)
    }

    pub fn fit_with_floor(selectivities: &[f64], floor: f64) -> Result<Self> {
        if selectivities.len() < 2 {
            return Err(Error::Degenerate("label transform needs at least two values".into()));
        }
        let logs: Vec<f64> = selectivities.iter().map(|&s| s.max(floor).ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Degenerate("constant labels".into()));
        }
        Ok(Self { mean, std, floor })
    }

    pub fn apply(&self, selectivity: f64) -> f64 {
        (selectivity.max(self.floor).ln() - self.mean) / self.std
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y * self.std + self.mean).exp().clamp(self.floor, 1.0)
    }
}
