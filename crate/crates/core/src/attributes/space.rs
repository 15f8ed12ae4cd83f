use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of binary attributes in the shipped space.
pub const NUM_ATTRIBUTES: usize = 27;
pub const LABEL_PLACEHOLDER: &str = "{ Label Text }";

const DEFAULT_SPACE: &str = include_str!("../../data/attributes.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    /// Annotation-file label name, e.g. `"male"`.
    pub label: String,
    pub template: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub category: String,
    pub label0: LabelDef,
    pub label1: LabelDef,
}

impl AttributeDef {
    pub fn label(&self, value: u8) -> &LabelDef {
        if value == 0 {
            &self.label0
        } else {
            &self.label1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateFamily {
    Is,
    With,
    Without,
    Wears,
    DoesNotWear,
}

impl TemplateFamily {
    pub fn of(template: &str) -> Option<Self> {
        let head = template.split(LABEL_PLACEHOLDER).next()?.trim();
        match head {
            "the person is" => Some(Self::Is),
            "the person with" => Some(Self::With),
            "the person without" => Some(Self::Without),
            "the person wears" => Some(Self::Wears),
            "the person does not wear" => Some(Self::DoesNotWear),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SpaceFile {
    version: u32,
    attribute: Vec<AttributeDef>,
}

/// The ordered set of binary attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpace {
    attributes: Vec<AttributeDef>,
}

impl Default for AttributeSpace {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_SPACE).expect("shipped attribute space is valid")
    }
}

impl AttributeSpace {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpaceFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<attribute space>".into(),
            message: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(Error::config(format!("unsupported attribute space version {}", file.version)));
        }
        Self::new(file.attribute)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn new(attributes: Vec<AttributeDef>) -> Result<Self> {
        if attributes.len() != NUM_ATTRIBUTES {
            return Err(Error::config(format!(
                "attribute space needs exactly {NUM_ATTRIBUTES} attributes, found {}",
                attributes.len()
            )));
        }
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::config(format!("duplicate attribute '{}'", a.name)));
            }
            for l in [&a.label0, &a.label1] {
                if !l.template.contains(LABEL_PLACEHOLDER) {
                    return Err(Error::config(format!(
                        "template '{}' of '{}' lacks the {LABEL_PLACEHOLDER} slot",
                        l.template, a.name
                    )));
                }
                if TemplateFamily::of(&l.template).is_none() {
                    return Err(Error::config(format!("unknown template family '{}'", l.template)));
                }
            }
        }
        Ok(Self { attributes })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn get(&self, index: usize) -> &AttributeDef {
        &self.attributes[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttributeDef> {
        self.attributes.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

/// Per-image label assignment: `Some(0)`, `Some(1)` or unknown.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector(Vec<Option<u8>>);

impl Default for AttributeVector {
    fn default() -> Self {
        Self::unknown()
    }
}

impl AttributeVector {
    pub fn unknown() -> Self {
        Self(vec![None; NUM_ATTRIBUTES])
    }

    pub fn from_values(values: Vec<Option<u8>>) -> Result<Self> {
        if values.len() != NUM_ATTRIBUTES {
            return Err(Error::contract(format!(
                "attribute vector needs {NUM_ATTRIBUTES} entries, got {}",
                values.len()
            )));
        }
        if values.iter().flatten().any(|&v| v > 1) {
            return Err(Error::contract("attribute values must be 0, 1 or unknown"));
        }
        Ok(Self(values))
    }

    pub fn get(&self, attr: usize) -> Option<u8> {
        self.0[attr]
    }

    pub fn set(&mut self, attr: usize, value: Option<u8>) {
        debug_assert!(value.is_none_or(|v| v <= 1));
        self.0[attr] = value;
    }

    pub fn values(&self) -> &[Option<u8>] {
        &self.0
    }

    /// `(attribute, value)` for every known entry, in attribute order.
    pub fn known(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.0.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    pub fn known_count(&self) -> usize {
        self.0.iter().flatten().count()
    }

    /// Validates the serialized form (length and value range).
    pub fn validate(&self) -> Result<()> {
        Self::from_values(self.0.clone()).map(|_| ())
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.0 {
            match v {
                Some(x) => write!(f, "{x}")?,
                None => write!(f, "?")?,
            }
        }
        Ok(())
    }
}
