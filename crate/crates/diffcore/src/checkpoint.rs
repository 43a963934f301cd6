//! JSON checkpoints for [`Mlp`]s.
//!
//! Values are written as `f64` through `serde_json`'s shortest round-trip
//! formatting, so save → load is bit-exact for `f64` (and for `f32`, which
//! widens exactly).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Activation, Dense, Mlp, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT: &str = "diffcore-mlp";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// `fan_in` rows of `fan_out` values.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

impl<F: Scalar> From<&Mlp<F>> for MlpRecord {
    fn from(mlp: &Mlp<F>) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|l| {
                let w = &l.weight.value;
                LayerRecord {
                    fan_in: w.rows(),
                    fan_out: w.cols(),
                    activation: l.activation,
                    weight: (0..w.rows())
                        .map(|r| w.row(r).iter().map(|v| v.as_f64()).collect())
                        .collect(),
                    bias: l.bias.value.data().iter().map(|v| v.as_f64()).collect(),
                }
            })
            .collect();
        MlpRecord {
            format: FORMAT.to_string(),
            version: VERSION,
            widths: mlp.widths(),
            layers,
        }
    }
}

impl MlpRecord {
    pub fn into_mlp<F: Scalar>(self) -> Result<Mlp<F>> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            if self.widths.get(i) != Some(&l.fan_in) || self.widths.get(i + 1) != Some(&l.fan_out) {
                return Err(Error::Checkpoint(format!(
                    "layer {i} disagrees with header widths"
                )));
            }
            if l.weight.len() != l.fan_in || l.weight.iter().any(|r| r.len() != l.fan_out) {
                return Err(Error::Checkpoint(format!(
                    "layer {i} weight is not {}x{}",
                    l.fan_in, l.fan_out
                )));
            }
            let w: Vec<F> = l.weight.iter().flatten().map(|&v| F::lit(v)).collect();
            let b: Vec<F> = l.bias.iter().map(|&v| F::lit(v)).collect();
            layers.push(Dense {
                weight: Param::new(Tensor::from_vec(l.fan_in, l.fan_out, w)?),
                bias: Param::new(
                    Tensor::from_vec(1, l.fan_out, b)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?,
                ),
                activation: l.activation,
            });
        }
        if layers.len() + 1 != self.widths.len() {
            return Err(Error::Checkpoint(
                "layer count disagrees with header widths".into(),
            ));
        }
        Mlp::from_layers(layers)
    }
}

pub fn to_json<F: Scalar>(mlp: &Mlp<F>) -> String {
    serde_json::to_string(&MlpRecord::from(mlp)).expect("plain data serializes")
}

pub fn from_json<F: Scalar>(text: &str) -> Result<Mlp<F>> {
    let record: MlpRecord =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    record.into_mlp()
}

pub fn save<F: Scalar>(mlp: &Mlp<F>, path: &Path) -> Result<()> {
    fs::write(path, to_json(mlp)).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load<F: Scalar>(path: &Path) -> Result<Mlp<F>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
