use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, LEAKY_SLOPE};
use super::recurrent::{RecurrentNet, SeqMode};
use super::tensor::{Standardizer, Tensor};
use crate::error::{Error, Result};
use crate::estimator::{selectivity_to_cardinality, Estimator};
use crate::featurize::{encode_flat, encode_sequence, EncodingSpec, LabelTransform};
use crate::workload::{JoinSequence, Query};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchRecord {
    Dense {
        input_width: usize,
        hidden_widths: Vec<usize>,
        residual: bool,
        leaky_slope: f64,
    },
    Recurrent {
        input_width: usize,
        hidden_width: usize,
        depth: usize,
        mode: SeqMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizers {
    pub input: Option<Standardizer>,
    pub label: Option<LabelTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk form of either network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    pub format_version: u32,
    pub arch: ArchRecord,
    pub seeds: BTreeMap<String, u64>,
    pub standardizers: Standardizers,
    pub parameters: Vec<NamedTensor>,
}

fn named(names: Vec<String>, params: &[Tensor]) -> Vec<NamedTensor> {
    names
        .into_iter()
        .zip(params)
        .map(|(name, t)| NamedTensor { name, shape: t.shape.clone(), data: t.data.clone() })
        .collect()
}

fn unnamed(expected: &[Tensor], stored: &[NamedTensor]) -> Result<Vec<Tensor>> {
    if expected.len() != stored.len() {
        return Err(Error::ShapeMismatch { expected: expected.len(), got: stored.len() });
    }
    expected
        .iter()
        .zip(stored)
        .map(|(e, s)| {
            let t = Tensor { shape: s.shape.clone(), data: s.data.clone() };
            e.check_shape(&t)?;
            Ok(t)
        })
        .collect()
}

impl From<&DenseNet> for NetFile {
    fn from(net: &DenseNet) -> Self {
        let mut names = Vec::new();
        for l in 0..net.depth() {
            names.push(format!("hidden{l}.weight"));
            names.push(format!("hidden{l}.bias"));
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        NetFile {
            format_version: FORMAT_VERSION,
            arch: ArchRecord::Dense {
                input_width: net.input_width,
                hidden_widths: net.hidden_widths.clone(),
                residual: net.residual,
                leaky_slope: LEAKY_SLOPE,
            },
            seeds: [("init".to_string(), net.init_seed)].into(),
            standardizers: Standardizers { input: net.input_standardizer.clone(), label: net.label_transform },
            parameters: named(names, &net.params),
        }
    }
}

impl From<&RecurrentNet> for NetFile {
    fn from(net: &RecurrentNet) -> Self {
        let mut names = Vec::new();
        for l in 0..net.depth {
            names.push(format!("cell{l}.input_weight"));
            names.push(format!("cell{l}.hidden_weight"));
            names.push(format!("cell{l}.bias"));
        }
        names.push("readout.weight".into());
        names.push("readout.bias".into());
        NetFile {
            format_version: FORMAT_VERSION,
            arch: ArchRecord::Recurrent {
                input_width: net.input_width,
                hidden_width: net.hidden_width,
                depth: net.depth,
                mode: net.mode,
            },
            seeds: [("init".to_string(), net.init_seed)].into(),
            standardizers: Standardizers { input: net.input_standardizer.clone(), label: net.label_transform },
            parameters: named(names, &net.params),
        }
    }
}

/// A network restored from a [`NetFile`].
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedNet {
    Dense(DenseNet),
    Recurrent(RecurrentNet),
}

impl NetFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn into_net(self) -> Result<LoadedNet> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let seed = self.seeds.get("init").copied().unwrap_or(0);
        match self.arch {
            ArchRecord::Dense { input_width, hidden_widths, residual, .. } => {
                if hidden_widths.is_empty() || hidden_widths.contains(&0) || input_width == 0 {
                    return Err(Error::InvalidArgument("invalid dense architecture".into()));
                }
                let mut params = Vec::new();
                let mut fan_in = input_width;
                for &w in &hidden_widths {
                    params.push(Tensor::zeros(&[w, fan_in]));
                    params.push(Tensor::zeros(&[w]));
                    fan_in = w;
                }
                params.push(Tensor::zeros(&[1, fan_in]));
                params.push(Tensor::zeros(&[1]));
                Ok(LoadedNet::Dense(DenseNet {
                    input_width,
                    hidden_widths,
                    residual,
                    params: unnamed(&params, &self.parameters)?,
                    input_standardizer: self.standardizers.input,
                    label_transform: self.standardizers.label,
                    init_seed: seed,
                }))
            }
            ArchRecord::Recurrent { input_width, hidden_width, depth, mode } => {
                let shell = RecurrentNet::init(
                    super::RecurrentArch { width: hidden_width, depth, mode },
                    input_width,
                    seed,
                )?;
                Ok(LoadedNet::Recurrent(RecurrentNet {
                    params: unnamed(&shell.params, &self.parameters)?,
                    input_standardizer: self.standardizers.input,
                    label_transform: self.standardizers.label,
                    ..shell
                }))
            }
        }
    }
}

pub fn read_model(json: &str) -> Result<LoadedNet> {
    serde_json::from_str::<NetFile>(json)?.into_net()
}

/// One row per input, one column per hidden unit, shortest round-trip
/// float formatting.
pub fn write_latents_csv<W: Write>(w: W, latents: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    if let Some(first) = latents.first() {
        out.write_record((0..first.len()).map(|i| format!("h{i}")))?;
    }
    for row in latents {
        out.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    out.flush()?;
    Ok(())
}

fn width_check(spec: &EncodingSpec, width: usize) -> Result<()> {
    if spec.width() != width {
        return Err(Error::ShapeMismatch { expected: width, got: spec.width() });
    }
    Ok(())
}

impl DenseNet {
    pub fn predict_cardinality(
        &self,
        spec: &EncodingSpec,
        q: &Query,
        row_counts: &BTreeMap<String, usize>,
    ) -> Result<f64> {
        width_check(spec, self.input_width)?;
        let sel = self.predict_selectivity(&encode_flat(spec, q)?.values)?;
        selectivity_to_cardinality(sel, row_counts, q)
    }
}

impl RecurrentNet {
    pub fn predict_cardinality(
        &self,
        spec: &EncodingSpec,
        seq: &JoinSequence,
        row_counts: &BTreeMap<String, usize>,
    ) -> Result<f64> {
        width_check(spec, self.input_width)?;
        let xs: Vec<Vec<f64>> = encode_sequence(spec, seq)?.steps.into_iter().map(|v| v.values).collect();
        let sel = self.predict_selectivity(&xs)?;
        selectivity_to_cardinality(sel, row_counts, &seq.to_query())
    }
}

/// Lexicographically smallest connected order of `q`'s relations.
pub fn canonical_sequence(q: &Query) -> Result<JoinSequence> {
    let mut order: Vec<String> = Vec::with_capacity(q.relations.len());
    while order.len() < q.relations.len() {
        let next = q
            .relations
            .iter()
            .find(|r| {
                !order.contains(r)
                    && (order.is_empty()
                        || q.joins.iter().any(|j| j.touches(r) && order.iter().any(|o| j.touches(o))))
            })
            .ok_or(Error::Disconnected)?;
        order.push(next.clone());
    }
    JoinSequence::from_order(q, &order)
}

#[derive(Debug, Clone)]
pub struct DenseEstimator {
    pub name: String,
    pub net: DenseNet,
    pub spec: EncodingSpec,
    pub row_counts: BTreeMap<String, usize>,
}

impl Estimator for DenseEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        self.net.predict_cardinality(&self.spec, q, &self.row_counts)
    }

    fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentEstimator {
    pub name: String,
    pub net: RecurrentNet,
    pub spec: EncodingSpec,
    pub row_counts: BTreeMap<String, usize>,
}

impl Estimator for RecurrentEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, q: &Query) -> Result<f64> {
        self.estimate_sequence(&canonical_sequence(q)?)
    }

    fn estimate_sequence(&self, seq: &JoinSequence) -> Result<f64> {
        self.net.predict_cardinality(&self.spec, seq, &self.row_counts)
    }

    fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }
}
