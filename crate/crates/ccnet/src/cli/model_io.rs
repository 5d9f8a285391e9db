//! Model files: versioned JSON with exact float round-tripping.
//!
//! Floats are written with 17 significant digits (`d.16 * 10^e`), which pins
//! every `f64` bit pattern, so `save -> load -> save` is byte-identical and a
//! loaded layer reproduces forward outputs exactly. Table entries appear in
//! canonical (unit-major, node index, component) order; the gate projection,
//! when present, is row-major `p x m`.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ActivationKind, EvalPolicyKind, GatingKind, SelectorKindCfg};
use crate::cond_layer::{Activation, ConditionalLayer};
use crate::error::{Error, Result};
use crate::gating::{EvalPolicy, GateConfig, GateMode, SelectorStrategy};
use crate::matrix::Matrix;
use crate::prefix_weights::PrefixTreeTable;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GatingSection {
    mode: GatingKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tau: Option<f64>,
    eval_policy: EvalPolicyKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    projection: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    p: usize,
    q: usize,
    k: usize,
    m: usize,
    gating: GatingSection,
    selector: SelectorKindCfg,
    activation: ActivationKind,
    bias: Vec<f64>,
    table: Vec<f64>,
}

/// JSON formatter writing every float with 17 significant digits.
struct SigFig17;

impl serde_json::ser::Formatter for SigFig17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

fn to_model_file(layer: &ConditionalLayer) -> Result<ModelFile> {
    for &v in layer.bias.iter().chain(layer.table.entries()) {
        if !v.is_finite() {
            return Err(Error::ModelFormat(format!(
                "refusing to serialize a non-finite parameter: {v}"
            )));
        }
    }
    let (mode, tau, projection) = match &layer.gate.mode {
        GateMode::Deterministic { tau } => (GatingKind::Deterministic, Some(*tau), None),
        GateMode::Stochastic { projection } => {
            if let Some(bad) = projection.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::ModelFormat(format!(
                    "refusing to serialize a non-finite projection entry: {bad}"
                )));
            }
            (GatingKind::Stochastic, None, Some(projection.data().to_vec()))
        }
    };
    Ok(ModelFile {
        format_version: FORMAT_VERSION,
        p: layer.p(),
        q: layer.q(),
        k: layer.k(),
        m: layer.m(),
        gating: GatingSection {
            mode,
            tau,
            eval_policy: match layer.gate.eval_policy {
                EvalPolicy::ThresholdMeanAtEval => EvalPolicyKind::ThresholdMean,
                EvalPolicy::SampleAtEval => EvalPolicyKind::Sample,
            },
            projection,
        },
        selector: match layer.selector.kind {
            crate::gating::SelectorKind::FirstK => SelectorKindCfg::FirstK,
            crate::gating::SelectorKind::SlidingWindow => SelectorKindCfg::SlidingWindow,
        },
        activation: match layer.activation {
            Activation::Identity => ActivationKind::Identity,
            Activation::Tanh => ActivationKind::Tanh,
            Activation::Rectifier => ActivationKind::Rectifier,
        },
        bias: layer.bias.clone(),
        table: layer.table.entries().to_vec(),
    })
}

/// Serialize a layer to its canonical byte form.
pub fn model_to_bytes(layer: &ConditionalLayer) -> Result<Vec<u8>> {
    let file = to_model_file(layer)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFig17);
    file.serialize(&mut ser)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Write the model file. Lazy decay must already be settled (`finalize`).
pub fn save_model(layer: &ConditionalLayer, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(layer)?)?;
    Ok(())
}

/// Parse a model from its JSON text.
pub fn parse_model(text: &str) -> Result<ConditionalLayer> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {} (this build reads version {FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.bias.len() != file.q {
        return Err(Error::ModelFormat(format!(
            "bias holds {} entries, header says q = {}",
            file.bias.len(),
            file.q
        )));
    }
    let gate = match file.gating.mode {
        GatingKind::Deterministic => {
            let tau = file.gating.tau.ok_or_else(|| {
                Error::ModelFormat("deterministic gating requires a tau field".into())
            })?;
            if file.gating.projection.is_some() {
                return Err(Error::ModelFormat(
                    "deterministic gating must not carry a projection".into(),
                ));
            }
            let mut cfg = GateConfig::deterministic(tau, file.m);
            cfg.eval_policy = file.gating.eval_policy.into();
            cfg
        }
        GatingKind::Stochastic => {
            let flat = file.gating.projection.ok_or_else(|| {
                Error::ModelFormat("stochastic gating requires a projection payload".into())
            })?;
            if flat.len() != file.p * file.m {
                return Err(Error::ModelFormat(format!(
                    "projection holds {} entries, header says p*m = {}",
                    flat.len(),
                    file.p * file.m
                )));
            }
            if let Some(bad) = flat.iter().find(|v| !v.is_finite()) {
                return Err(Error::ModelFormat(format!(
                    "projection contains a non-finite entry: {bad}"
                )));
            }
            let projection = Matrix::from_flat(file.p, file.m, flat)
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            GateConfig::stochastic(projection, file.gating.eval_policy.into())
        }
    };
    let table = PrefixTreeTable::from_entries(file.p, file.q, file.k, file.table)?;
    let selector = match file.selector {
        SelectorKindCfg::FirstK => SelectorStrategy::first_k(file.k),
        SelectorKindCfg::SlidingWindow => SelectorStrategy::sliding_window(file.k),
    };
    ConditionalLayer::new(gate, selector, table, file.bias, file.activation.into())
        .map_err(|e| Error::ModelFormat(e.to_string()))
}

/// Load a model file from disk.
pub fn load_model(path: &Path) -> Result<ConditionalLayer> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}
