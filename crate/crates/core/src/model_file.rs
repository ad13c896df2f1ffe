//! JSON model files.
//!
//! ```json
//! {
//!   "alphabet": ["a", "b"],
//!   "matrix": [[1, 1], [1, 1]],
//!   "v_per": [0.0, 0.0],
//!   "root_label": "a",
//!   "disorder": {"mode": "iid_both", "per_label": [{"law": "uniform", "params": {"w": 0.9}}, ...]}
//! }
//! ```
//!
//! `disorder` is optional. Reals are written with 17 significant digits so a
//! write/read round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::disorder::DisorderSpec;
use crate::error::{Error, Result};
use crate::substitution::SubstitutionModel;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    alphabet: Vec<String>,
    matrix: Vec<Vec<u32>>,
    v_per: Vec<f64>,
    root_label: String,
    #[serde(default)]
    disorder: Option<DisorderSpec>,
}

/// A model together with the disorder it ships with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: SubstitutionModel,
    pub disorder: Option<DisorderSpec>,
}

/// Parses a model file. Syntax errors carry line and column; structural
/// problems such as a non-square matrix are `InvalidModel`.
pub fn parse(text: &str) -> Result<ModelFile> {
    let raw: RawModel = serde_json::from_str(text)?;
    let root = raw
        .alphabet
        .iter()
        .position(|a| *a == raw.root_label)
        .ok_or_else(|| Error::InvalidModel(format!("root label {:?} not in alphabet", raw.root_label)))?;
    let model = SubstitutionModel::with_alphabet(raw.alphabet, raw.matrix, raw.v_per, root)?;
    if let Some(d) = &raw.disorder {
        d.validate(&model)?;
    }
    Ok(ModelFile {
        model,
        disorder: raw.disorder,
    })
}

pub fn read(path: &Path) -> Result<ModelFile> {
    parse(&std::fs::read_to_string(path)?)
}

#[derive(Serialize)]
struct OutModel<'a> {
    alphabet: &'a [String],
    matrix: &'a [Vec<u32>],
    v_per: Vec<Box<RawValue>>,
    root_label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    disorder: Option<&'a DisorderSpec>,
}

/// `x` as a JSON number with 17 significant digits.
pub fn exact_real(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.16e}")).expect("formatted float is valid JSON")
}

pub fn to_json(model: &SubstitutionModel, disorder: Option<&DisorderSpec>) -> String {
    let out = OutModel {
        alphabet: model.alphabet(),
        matrix: model.matrix(),
        v_per: model.v_per().iter().map(|&x| exact_real(x)).collect(),
        root_label: &model.alphabet()[model.root_label()],
        disorder,
    };
    serde_json::to_string_pretty(&out).expect("model serializes")
}

pub fn write(path: &Path, model: &SubstitutionModel, disorder: Option<&DisorderSpec>) -> Result<()> {
    std::fs::write(path, to_json(model, disorder) + "\n")?;
    Ok(())
}
