//! JSON weights file.
//!
//! ```text
//! {
//!   "version": 1,
//!   "latent_dim": p,
//!   "output_dim": d,
//!   "mean_layers": [ {"type": "dense", "rows": r, "cols": c, "W": [...], "b": [...]},
//!                    {"type": "tanh" | "sigmoid" | "softplus"}, ... ],
//!   "cov_head": {"variant": "isotropic" | "diagonal" | "full",
//!                "eps_gamma": ε, "layers": [ ...same layer schema... ]},
//!   "encoder": [ ...same layer schema... ]          (optional)
//! }
//! ```
//!
//! `W` is row-major with `rows` = output width and `cols` = input width.
//! Numbers are written with 17 significant digits so a save/load cycle is
//! exact.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Activation, CovHead, CovVariant, GeneratorNet, Layer, Network};
use crate::error::{Error, Result};

pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerSpec {
    Dense {
        rows: usize,
        cols: usize,
        #[serde(rename = "W")]
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Tanh,
    Sigmoid,
    Softplus,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovHeadSpec {
    variant: CovVariant,
    eps_gamma: f64,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    version: u32,
    latent_dim: usize,
    output_dim: usize,
    mean_layers: Vec<LayerSpec>,
    cov_head: CovHeadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<Vec<LayerSpec>>,
}

fn layers_from_spec(section: &str, specs: Vec<LayerSpec>) -> Result<Vec<Layer>> {
    specs
        .into_iter()
        .enumerate()
        .map(|(idx, spec)| {
            Ok(match spec {
                LayerSpec::Dense { rows, cols, w, b } => {
                    if w.len() != rows * cols {
                        return Err(Error::Validation(format!(
                            "{section}[{idx}]: W has {} entries, expected rows*cols = {}",
                            w.len(),
                            rows * cols
                        )));
                    }
                    if b.len() != rows {
                        return Err(Error::Validation(format!(
                            "{section}[{idx}]: b has {} entries, expected rows = {rows}",
                            b.len()
                        )));
                    }
                    Layer::Dense {
                        w: DMatrix::from_row_slice(rows, cols, &w),
                        b: DVector::from_vec(b),
                    }
                }
                LayerSpec::Tanh => Layer::Activation(Activation::Tanh),
                LayerSpec::Sigmoid => Layer::Activation(Activation::Sigmoid),
                LayerSpec::Softplus => Layer::Activation(Activation::Softplus),
            })
        })
        .collect()
}

fn network_from_spec(section: &str, specs: Vec<LayerSpec>, input_dim: usize) -> Result<Network> {
    Network::new(layers_from_spec(section, specs)?, input_dim)
        .map_err(|e| Error::Validation(format!("{section}: {e}")))
}

fn spec_from_network(net: &Network) -> Vec<LayerSpec> {
    net.layers()
        .iter()
        .map(|layer| match layer {
            Layer::Dense { w, b } => LayerSpec::Dense {
                rows: w.nrows(),
                cols: w.ncols(),
                w: w.transpose().iter().cloned().collect(),
                b: b.iter().cloned().collect(),
            },
            Layer::Activation(Activation::Tanh) => LayerSpec::Tanh,
            Layer::Activation(Activation::Sigmoid) => LayerSpec::Sigmoid,
            Layer::Activation(Activation::Softplus) => LayerSpec::Softplus,
        })
        .collect()
}

pub fn parse_weights(text: &str) -> Result<GeneratorNet> {
    let file: WeightsFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("weights file: {e}")))?;
    if file.version != WEIGHTS_VERSION {
        return Err(Error::Parse(format!(
            "weights file: field `version` is {}, only {WEIGHTS_VERSION} is supported",
            file.version
        )));
    }
    let mean = network_from_spec("mean_layers", file.mean_layers, file.latent_dim)?;
    if mean.output_dim() != file.output_dim {
        return Err(Error::Validation(format!(
            "mean_layers: output width {} differs from output_dim {}",
            mean.output_dim(),
            file.output_dim
        )));
    }
    let head_net = network_from_spec("cov_head.layers", file.cov_head.layers, file.latent_dim)?;
    let head = CovHead::new(file.cov_head.variant, head_net, file.cov_head.eps_gamma, file.output_dim)?;
    let encoder = file
        .encoder
        .map(|specs| network_from_spec("encoder", specs, file.output_dim))
        .transpose()?;
    GeneratorNet::new(mean, head, encoder)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<GeneratorNet> {
    parse_weights(&fs::read_to_string(path)?)
}

/// Compact JSON with every float written as `{:.16e}`.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_weights_string(net: &GeneratorNet) -> Result<String> {
    let file = WeightsFile {
        version: WEIGHTS_VERSION,
        latent_dim: net.latent_dim(),
        output_dim: net.output_dim(),
        mean_layers: spec_from_network(net.mean_network()),
        cov_head: CovHeadSpec {
            variant: net.cov_head().variant(),
            eps_gamma: net.cov_head().eps_gamma(),
            layers: spec_from_network(net.cov_head().network()),
        },
        encoder: net.encoder().map(spec_from_network),
    };
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    file.serialize(&mut ser)
        .map_err(|e| Error::Parse(format!("serializing weights: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn save_weights(net: &GeneratorNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_weights_string(net)?)?;
    Ok(())
}
