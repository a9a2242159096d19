//! Columnar in-memory relations over 64-bit integers, PK–FK schemas, skewed
//! synthetic generation and CSV ingestion.
//!
//! Relations are immutable once built. Foreign-key generators produce a
//! 1-based rank which is mapped onto the target's primary-key values in
//! ascending order (modulo the target size), so referential integrity holds
//! by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// `relation.column`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub relation: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(relation: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            relation: relation.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.column)
    }
}

impl FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((r, c)) if !r.is_empty() && !c.is_empty() && !c.contains('.') => {
                Ok(ColumnRef::new(r, c))
            }
            _ => Err(Error::UnknownColumn(s.to_string())),
        }
    }
}

impl Serialize for ColumnRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A join predicate `fk = pk` derived from a foreign-key declaration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JoinEdge {
    pub fk: ColumnRef,
    pub pk: ColumnRef,
}

impl JoinEdge {
    pub fn touches(&self, relation: &str) -> bool {
        self.fk.relation == relation || self.pk.relation == relation
    }

    /// The endpoint on the other side of `relation`, if the edge touches it.
    pub fn other(&self, relation: &str) -> Option<&str> {
        if self.fk.relation == relation {
            Some(&self.pk.relation)
        } else if self.pk.relation == relation {
            Some(&self.fk.relation)
        } else {
            None
        }
    }

    pub fn column_of(&self, relation: &str) -> Option<&ColumnRef> {
        if self.fk.relation == relation {
            Some(&self.fk)
        } else if self.pk.relation == relation {
            Some(&self.pk)
        } else {
            None
        }
    }
}

impl fmt::Display for JoinEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.fk, self.pk)
    }
}

impl FromStr for JoinEdge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidQuery(format!("malformed join `{s}`")))?;
        Ok(JoinEdge {
            fk: a.trim().parse()?,
            pk: b.trim().parse()?,
        })
    }
}

impl Serialize for JoinEdge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for JoinEdge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Generator {
    Sequential,
    Uniform { lo: i64, hi: i64 },
    Zipf { domain_size: u64, z: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    PrimaryKey,
    ForeignKey(ColumnRef),
    Attribute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    pub generator: Option<Generator>,
}

impl ColumnDef {
    pub fn primary_key(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::PrimaryKey,
            generator: Some(Generator::Sequential),
        }
    }

    pub fn foreign_key(name: &str, target: ColumnRef, generator: Generator) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::ForeignKey(target),
            generator: Some(generator),
        }
    }

    pub fn attribute(name: &str, generator: Option<Generator>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Attribute,
            generator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl RelationSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn primary_key(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::PrimaryKey)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate column `{}.{}`",
                    self.name, c.name
                )));
            }
        }
        if self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::PrimaryKey)
            .count()
            > 1
        {
            return Err(Error::InvalidSchema(format!(
                "relation `{}` declares more than one primary key",
                self.name
            )));
        }
        for c in &self.columns {
            match (&c.kind, &c.generator) {
                (ColumnKind::PrimaryKey, Some(g)) if *g != Generator::Sequential => {
                    return Err(Error::InvalidSchema(format!(
                        "primary key `{}.{}` must use the sequential generator",
                        self.name, c.name
                    )));
                }
                (_, Some(Generator::Zipf { domain_size, z })) => {
                    if *domain_size < 1 || !(*z >= 0.0) || !z.is_finite() {
                        return Err(Error::InvalidSchema(format!(
                            "zipf parameters of `{}.{}` out of range",
                            self.name, c.name
                        )));
                    }
                }
                (_, Some(Generator::Uniform { lo, hi })) if lo > hi => {
                    return Err(Error::InvalidSchema(format!(
                        "uniform bounds of `{}.{}` are reversed",
                        self.name, c.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseSchema {
    pub relations: Vec<RelationSchema>,
    pub join_edges: Vec<JoinEdge>,
    pub selection_columns: Vec<ColumnRef>,
}

impl DatabaseSchema {
    /// Validates the relations and derives the join edges from the
    /// foreign-key declarations, in declaration order.
    pub fn new(relations: Vec<RelationSchema>, selection_columns: Vec<ColumnRef>) -> Result<Self> {
        let mut names = HashSet::new();
        for r in &relations {
            if !names.insert(r.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate relation `{}`",
                    r.name
                )));
            }
            r.validate()?;
        }
        let mut schema = DatabaseSchema {
            relations,
            join_edges: Vec::new(),
            selection_columns,
        };
        let mut edges = Vec::new();
        for r in &schema.relations {
            for c in &r.columns {
                if let ColumnKind::ForeignKey(target) = &c.kind {
                    let tr = schema
                        .relation(&target.relation)
                        .ok_or_else(|| Error::UnknownRelation(target.relation.clone()))?;
                    let tc = tr
                        .column_index(&target.column)
                        .ok_or_else(|| Error::UnknownColumn(target.to_string()))?;
                    if tr.columns[tc].kind != ColumnKind::PrimaryKey {
                        return Err(Error::InvalidSchema(format!(
                            "foreign key `{}.{}` targets non-key column `{target}`",
                            r.name, c.name
                        )));
                    }
                    edges.push(JoinEdge {
                        fk: ColumnRef::new(&r.name, &c.name),
                        pk: target.clone(),
                    });
                }
            }
        }
        schema.join_edges = edges;
        for sc in &schema.selection_columns {
            match schema.column_def(sc) {
                Some(def) if def.kind == ColumnKind::Attribute => {}
                Some(_) => {
                    return Err(Error::InvalidSchema(format!(
                        "selection column `{sc}` is not an attribute"
                    )))
                }
                None => return Err(Error::UnknownColumn(sc.to_string())),
            }
        }
        if !schema.is_connected() {
            return Err(Error::InvalidSchema("join graph is not connected".into()));
        }
        Ok(schema)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn column_def(&self, col: &ColumnRef) -> Option<&ColumnDef> {
        self.relation(&col.relation)?
            .columns
            .iter()
            .find(|c| c.name == col.column)
    }

    pub fn is_selection_column(&self, col: &ColumnRef) -> bool {
        self.selection_columns.contains(col)
    }

    pub fn selection_columns_of<'a>(&'a self, relation: &'a str) -> impl Iterator<Item = &'a ColumnRef> {
        self.selection_columns
            .iter()
            .filter(move |c| c.relation == relation)
    }

    /// Relation indices adjacent to `idx` in the join graph.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let name = &self.relations[idx].name;
        let mut out: Vec<usize> = self
            .join_edges
            .iter()
            .filter_map(|e| e.other(name))
            .filter(|o| *o != name)
            .filter_map(|o| self.relation_index(o))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_connected(&self) -> bool {
        if self.relations.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.relations.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for n in self.neighbors(i) {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SchemaFile::from(self))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    relations: Vec<RelationFile>,
    #[serde(default)]
    selection_columns: Vec<ColumnRef>,
}

#[derive(Serialize, Deserialize)]
struct RelationFile {
    name: String,
    columns: Vec<ColumnFile>,
}

#[derive(Serialize, Deserialize)]
struct ColumnFile {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<ColumnRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<Generator>,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum KindTag {
    PrimaryKey,
    ForeignKey,
    Attribute,
}

impl TryFrom<SchemaFile> for DatabaseSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        let mut relations = Vec::with_capacity(file.relations.len());
        for r in file.relations {
            let mut columns = Vec::with_capacity(r.columns.len());
            for c in r.columns {
                let kind = match (c.kind, c.target) {
                    (KindTag::ForeignKey, Some(t)) => ColumnKind::ForeignKey(t),
                    (KindTag::ForeignKey, None) => {
                        return Err(Error::InvalidSchema(format!(
                            "foreign key `{}.{}` has no target",
                            r.name, c.name
                        )))
                    }
                    (KindTag::PrimaryKey, _) => ColumnKind::PrimaryKey,
                    (KindTag::Attribute, _) => ColumnKind::Attribute,
                };
                columns.push(ColumnDef {
                    name: c.name,
                    kind,
                    generator: c.generator,
                });
            }
            relations.push(RelationSchema {
                name: r.name,
                columns,
            });
        }
        DatabaseSchema::new(relations, file.selection_columns)
    }
}

impl From<&DatabaseSchema> for SchemaFile {
    fn from(s: &DatabaseSchema) -> Self {
        SchemaFile {
            relations: s
                .relations
                .iter()
                .map(|r| RelationFile {
                    name: r.name.clone(),
                    columns: r
                        .columns
                        .iter()
                        .map(|c| {
                            let (kind, target) = match &c.kind {
                                ColumnKind::PrimaryKey => (KindTag::PrimaryKey, None),
                                ColumnKind::ForeignKey(t) => (KindTag::ForeignKey, Some(t.clone())),
                                ColumnKind::Attribute => (KindTag::Attribute, None),
                            };
                            ColumnFile {
                                name: c.name.clone(),
                                kind,
                                target,
                                generator: c.generator.clone(),
                            }
                        })
                        .collect(),
                })
                .collect(),
            selection_columns: s.selection_columns.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub schema: RelationSchema,
    pub columns: Vec<Vec<i64>>,
    pub row_count: usize,
}

impl Relation {
    /// Builds a relation, enforcing equal column lengths and distinct
    /// primary-key values.
    pub fn new(schema: RelationSchema, columns: Vec<Vec<i64>>) -> Result<Self> {
        if columns.len() != schema.columns.len() {
            return Err(Error::ShapeMismatch {
                expected: schema.columns.len(),
                got: columns.len(),
            });
        }
        let row_count = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != row_count) {
            return Err(Error::ShapeMismatch {
                expected: row_count,
                got: bad.len(),
            });
        }
        if let Some(pk) = schema.primary_key() {
            let mut seen = HashSet::with_capacity(row_count);
            for &v in &columns[pk] {
                if !seen.insert(v) {
                    return Err(Error::DuplicatePrimaryKey {
                        column: format!("{}.{}", schema.name, schema.columns[pk].name),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            schema,
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }

    pub fn column(&self, name: &str) -> Option<&[i64]> {
        self.schema
            .column_index(name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let mut row = Vec::with_capacity(self.columns.len());
        for i in 0..self.row_count {
            row.clear();
            row.extend(self.columns.iter().map(|c| c[i].to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a relation from CSV text. The header must list the schema's column
/// names in order; every cell must be a 64-bit signed integer.
pub fn read_csv<R: Read>(reader: R, schema: RelationSchema) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        return Err(Error::HeaderMismatch {
            expected,
            found: header,
        });
    }
    let mut columns = vec![Vec::new(); expected.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::Parse {
                row: row + 1,
                column: String::new(),
                message: format!("expected {} cells, found {}", expected.len(), record.len()),
            });
        }
        for (ci, cell) in record.iter().enumerate() {
            let v = cell.trim().parse::<i64>().map_err(|e| Error::Parse {
                row: row + 1,
                column: expected[ci].clone(),
                message: format!("`{cell}`: {e}"),
            })?;
            columns[ci].push(v);
        }
    }
    Relation::new(schema, columns)
}

pub fn load_csv(path: &Path, schema: RelationSchema) -> Result<Relation> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_csv(file, schema)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub schema: DatabaseSchema,
    relations: Vec<Relation>,
}

impl Database {
    /// Assembles a database, checking that every schema relation is present
    /// and that foreign keys only reference existing primary-key values.
    pub fn from_relations(schema: DatabaseSchema, relations: Vec<Relation>) -> Result<Self> {
        let mut by_name: HashMap<String, Relation> = HashMap::new();
        for r in relations {
            if schema.relation(r.name()).is_none() {
                return Err(Error::UnknownRelation(r.name().to_string()));
            }
            by_name.insert(r.name().to_string(), r);
        }
        let mut ordered = Vec::with_capacity(schema.relations.len());
        for rs in &schema.relations {
            let r = by_name
                .remove(&rs.name)
                .ok_or_else(|| Error::UnknownRelation(rs.name.clone()))?;
            if r.schema != *rs {
                return Err(Error::InvalidSchema(format!(
                    "relation `{}` does not match its schema",
                    rs.name
                )));
            }
            ordered.push(r);
        }
        let db = Database {
            schema,
            relations: ordered,
        };
        db.check_integrity()?;
        Ok(db)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.schema
            .relation_index(name)
            .map(|i| &self.relations[i])
    }

    pub fn column(&self, col: &ColumnRef) -> Result<&[i64]> {
        self.relation(&col.relation)
            .ok_or_else(|| Error::UnknownRelation(col.relation.clone()))?
            .column(&col.column)
            .ok_or_else(|| Error::UnknownColumn(col.to_string()))
    }

    pub fn row_count(&self, relation: &str) -> Result<usize> {
        self.relation(relation)
            .map(|r| r.row_count)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    pub fn row_counts(&self) -> BTreeMap<String, usize> {
        self.relations
            .iter()
            .map(|r| (r.name().to_string(), r.row_count))
            .collect()
    }

    pub fn check_integrity(&self) -> Result<()> {
        for edge in &self.schema.join_edges {
            let targets: HashSet<i64> = self.column(&edge.pk)?.iter().copied().collect();
            if let Some(&v) = self.column(&edge.fk)?.iter().find(|v| !targets.contains(v)) {
                return Err(Error::DanglingForeignKey {
                    column: edge.fk.to_string(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Writes `schema.json` plus one `<relation>.csv` per relation.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let schema_path = dir.join("schema.json");
        fs::write(&schema_path, self.schema.to_json()? + "\n")
            .map_err(|e| Error::file(&schema_path, e))?;
        for r in &self.relations {
            let path = dir.join(format!("{}.csv", r.name()));
            let f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            r.write_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let schema = DatabaseSchema::load(&dir.join("schema.json"))?;
        let relations = schema
            .relations
            .iter()
            .map(|rs| load_csv(&dir.join(format!("{}.csv", rs.name)), rs.clone()))
            .collect::<Result<Vec<_>>>()?;
        Database::from_relations(schema, relations)
    }
}

/// Inverse-CDF sampler over the exact normalized pmf `p(v) ∝ 1/v^z`,
/// `v ∈ 1..=domain_size`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(domain_size: u64, z: f64) -> Self {
        let weights: Vec<f64> = (1..=domain_size).map(|v| (v as f64).powf(-z)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self { cdf }
    }

    pub fn pmf(&self, v: u64) -> f64 {
        let i = (v - 1) as usize;
        if i == 0 {
            self.cdf[0]
        } else {
            self.cdf[i] - self.cdf[i - 1]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u);
        (i.min(self.cdf.len() - 1) + 1) as i64
    }
}

fn generate_column<R: Rng + ?Sized>(generator: &Generator, rows: usize, rng: &mut R) -> Vec<i64> {
    match generator {
        Generator::Sequential => (1..=rows as i64).collect(),
        Generator::Uniform { lo, hi } => (0..rows).map(|_| rng.random_range(*lo..=*hi)).collect(),
        Generator::Zipf { domain_size, z } => {
            let sampler = ZipfSampler::new(*domain_size, *z);
            (0..rows).map(|_| sampler.sample(rng)).collect()
        }
    }
}

/// Generates a synthetic database. Deterministic for a fixed seed; each
/// column draws from its own sub-seed so adding a relation never perturbs
/// the others.
pub fn generate_synthetic(
    schema: &DatabaseSchema,
    row_counts: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Database> {
    for (name, &n) in row_counts {
        if schema.relation(name).is_none() {
            return Err(Error::UnknownRelation(name.clone()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument(format!(
                "row count of `{name}` must be positive"
            )));
        }
    }
    let counts: Vec<usize> = schema
        .relations
        .iter()
        .map(|r| {
            row_counts
                .get(&r.name)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no row count for `{}`", r.name)))
        })
        .collect::<Result<_>>()?;

    // Primary keys and attributes first; foreign keys need their targets.
    let mut columns: Vec<Vec<Option<Vec<i64>>>> = schema
        .relations
        .iter()
        .map(|r| vec![None; r.columns.len()])
        .collect();
    for (ri, r) in schema.relations.iter().enumerate() {
        for (ci, c) in r.columns.iter().enumerate() {
            if matches!(c.kind, ColumnKind::ForeignKey(_)) {
                continue;
            }
            let generator = match (&c.kind, &c.generator) {
                (ColumnKind::PrimaryKey, _) => Generator::Sequential,
                (_, Some(g)) => g.clone(),
                (_, None) => return Err(Error::MissingGenerator(format!("{}.{}", r.name, c.name))),
            };
            let mut rng = seed::rng_for(seed, &[ri as u64, ci as u64]);
            columns[ri][ci] = Some(generate_column(&generator, counts[ri], &mut rng));
        }
    }
    for (ri, r) in schema.relations.iter().enumerate() {
        for (ci, c) in r.columns.iter().enumerate() {
            let ColumnKind::ForeignKey(target) = &c.kind else {
                continue;
            };
            let generator = c
                .generator
                .clone()
                .ok_or_else(|| Error::MissingGenerator(format!("{}.{}", r.name, c.name)))?;
            let ti = schema.relation_index(&target.relation).expect("validated");
            let tc = schema.relations[ti]
                .column_index(&target.column)
                .expect("validated");
            let mut keys = columns[ti][tc].clone().expect("keys generated first");
            if keys.is_empty() {
                return Err(Error::EmptyForeignKeyTarget(format!("{}.{}", r.name, c.name)));
            }
            keys.sort_unstable();
            let mut rng = seed::rng_for(seed, &[ri as u64, ci as u64]);
            let ranks = generate_column(&generator, counts[ri], &mut rng);
            let n = keys.len() as i64;
            columns[ri][ci] = Some(
                ranks
                    .into_iter()
                    .map(|rank| keys[(rank - 1).rem_euclid(n) as usize])
                    .collect(),
            );
        }
    }
    let relations = schema
        .relations
        .iter()
        .zip(columns)
        .map(|(rs, cols)| Relation::new(rs.clone(), cols.into_iter().map(|c| c.expect("generated")).collect()))
        .collect::<Result<Vec<_>>>()?;
    Database::from_relations(schema.clone(), relations)
}

/// Sorted distinct values present in `column`.
pub fn active_domain(db: &Database, column: &ColumnRef) -> Result<Vec<i64>> {
    let mut values = db.column(column)?.to_vec();
    values.sort_unstable();
    values.dedup();
    Ok(values)
}

/// Parses a row-count spec: either a single count applied to every relation
/// or `name=count` pairs separated by commas.
pub fn parse_row_counts(spec: &str, schema: &DatabaseSchema) -> Result<BTreeMap<String, usize>> {
    let bad = || Error::InvalidArgument(format!("malformed row spec `{spec}`"));
    if let Ok(n) = spec.trim().parse::<usize>() {
        return Ok(schema.relations.iter().map(|r| (r.name.clone(), n)).collect());
    }
    let mut out = BTreeMap::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, n) = part.split_once('=').ok_or_else(bad)?;
        out.insert(name.trim().to_string(), n.trim().parse().map_err(|_| bad())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_relation(generator: Generator) -> DatabaseSchema {
        DatabaseSchema::new(
            vec![RelationSchema {
                name: "R".into(),
                columns: vec![ColumnDef::primary_key("id"), ColumnDef::attribute("v", Some(generator))],
            }],
            vec![ColumnRef::new("R", "v")],
        )
        .unwrap()
    }

    fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    #[test]
    fn sequential_pk() {
        let db = generate_synthetic(&one_relation(Generator::Sequential), &counts(&[("R", 5)]), 1).unwrap();
        assert_eq!(db.column(&ColumnRef::new("R", "id")).unwrap(), &[1, 2, 3, 4, 5]);
    }

    #[test]
    fn zipf_z0_is_uniform() {
        let g = Generator::Zipf { domain_size: 10, z: 0.0 };
        let db = generate_synthetic(&one_relation(g), &counts(&[("R", 10_000)]), 7).unwrap();
        let col = db.column(&ColumnRef::new("R", "v")).unwrap();
        for v in 1..=10 {
            let f = col.iter().filter(|&&x| x == v).count() as f64 / col.len() as f64;
            assert!((f - 0.1).abs() <= 0.02, "value {v} frequency {f}");
        }
    }

    #[test]
    fn zipf_z1_ratio_matches_pmf() {
        // Oracle: p(1)/p(2) = (1/1)/(1/2) = 2.
        let sampler = ZipfSampler::new(100, 1.0);
        assert!((sampler.pmf(1) / sampler.pmf(2) - 2.0).abs() < 1e-12);
        let g = Generator::Zipf { domain_size: 100, z: 1.0 };
        let db = generate_synthetic(&one_relation(g), &counts(&[("R", 100_000)]), 11).unwrap();
        let col = db.column(&ColumnRef::new("R", "v")).unwrap();
        let f1 = col.iter().filter(|&&x| x == 1).count() as f64;
        let f2 = col.iter().filter(|&&x| x == 2).count() as f64;
        assert!((f1 / f2 - 2.0).abs() <= 0.1, "ratio {}", f1 / f2);
    }

    #[test]
    fn zipf_domain_fully_covered() {
        let g = Generator::Zipf { domain_size: 10, z: 1.0 };
        let db = generate_synthetic(&one_relation(g), &counts(&[("R", 100_000)]), 3).unwrap();
        let dom = active_domain(&db, &ColumnRef::new("R", "v")).unwrap();
        assert_eq!(dom, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_relation_in_counts() {
        let err = generate_synthetic(&one_relation(Generator::Sequential), &counts(&[("R", 5), ("X", 1)]), 1)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownRelation(n) if n == "X"));
    }

    #[test]
    fn missing_generator_rejected() {
        let schema = DatabaseSchema::new(
            vec![RelationSchema {
                name: "R".into(),
                columns: vec![ColumnDef::attribute("v", None)],
            }],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            generate_synthetic(&schema, &counts(&[("R", 3)]), 0),
            Err(Error::MissingGenerator(_))
        ));
    }

    #[test]
    fn csv_basic_and_header_only() {
        let schema = RelationSchema {
            name: "T".into(),
            columns: vec![ColumnDef::attribute("a", None)],
        };
        let r = read_csv("a\n1\n2\n".as_bytes(), schema.clone()).unwrap();
        assert_eq!(r.columns[0], vec![1, 2]);
        assert_eq!(r.row_count, 2);
        let r = read_csv("a\n".as_bytes(), schema).unwrap();
        assert_eq!(r.row_count, 0);
    }

    #[test]
    fn csv_duplicate_pk_names_value() {
        let schema = RelationSchema {
            name: "T".into(),
            columns: vec![ColumnDef::primary_key("id")],
        };
        let err = read_csv("id\n4\n9\n4\n".as_bytes(), schema).unwrap_err();
        assert!(matches!(err, Error::DuplicatePrimaryKey { value: 4, .. }));
        assert!(err.to_string().contains('4'));
    }

    #[test]
    fn csv_parse_error_reports_position() {
        let schema = RelationSchema {
            name: "T".into(),
            columns: vec![ColumnDef::attribute("a", None), ColumnDef::attribute("b", None)],
        };
        let err = read_csv("a,b\n1,2\n3,x\n".as_bytes(), schema).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_fk_detected() {
        let a = RelationSchema {
            name: "A".into(),
            columns: vec![ColumnDef::foreign_key("b", ColumnRef::new("B", "id"), Generator::Sequential)],
        };
        let b = RelationSchema {
            name: "B".into(),
            columns: vec![ColumnDef::primary_key("id")],
        };
        let schema = DatabaseSchema::new(vec![a.clone(), b.clone()], vec![]).unwrap();
        let ra = read_csv("b\n1\n5\n".as_bytes(), a).unwrap();
        let rb = read_csv("id\n1\n2\n".as_bytes(), b).unwrap();
        let err = Database::from_relations(schema, vec![ra, rb]).unwrap_err();
        assert!(matches!(err, Error::DanglingForeignKey { value: 5, .. }));
    }

    #[test]
    fn active_domain_examples() {
        let schema = one_relation(Generator::Sequential);
        let r = Relation::new(schema.relations[0].clone(), vec![vec![1, 2, 3, 4], vec![3, 1, 3, 2]]).unwrap();
        let db = Database::from_relations(schema.clone(), vec![r]).unwrap();
        assert_eq!(active_domain(&db, &ColumnRef::new("R", "v")).unwrap(), vec![1, 2, 3]);
        let empty = Relation::new(schema.relations[0].clone(), vec![vec![], vec![]]).unwrap();
        let db = Database::from_relations(schema, vec![empty]).unwrap();
        assert!(active_domain(&db, &ColumnRef::new("R", "v")).unwrap().is_empty());
        assert!(matches!(
            active_domain(&db, &ColumnRef::new("R", "nope")),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn schema_rejects_disconnected_graph() {
        let err = DatabaseSchema::new(
            vec![
                RelationSchema { name: "A".into(), columns: vec![ColumnDef::primary_key("id")] },
                RelationSchema { name: "B".into(), columns: vec![ColumnDef::primary_key("id")] },
            ],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSchema(_)));
    }

    #[test]
    fn row_spec_parsing() {
        let schema = one_relation(Generator::Sequential);
        assert_eq!(parse_row_counts("12", &schema).unwrap()["R"], 12);
        assert_eq!(parse_row_counts("R=3", &schema).unwrap()["R"], 3);
        assert!(parse_row_counts("R:3", &schema).is_err());
    }
}
