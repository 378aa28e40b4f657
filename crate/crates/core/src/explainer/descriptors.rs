use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExplainerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Animal,
    Vehicle,
    Generic,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Animal => "animal",
            Category::Vehicle => "vehicle",
            Category::Generic => "generic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "animal" => Ok(Category::Animal),
            "vehicle" => Ok(Category::Vehicle),
            "generic" => Ok(Category::Generic),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// One artifact with its positive / negative / neutral descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDescriptor {
    pub name: String,
    pub category: Category,
    pub positive_text: String,
    pub negative_text: String,
    pub neutral_text: String,
}

impl ArtifactDescriptor {
    pub fn texts(&self) -> [&str; 3] {
        [&self.positive_text, &self.negative_text, &self.neutral_text]
    }

    pub fn validate(&self) -> Result<(), ExplainerError> {
        if !is_snake_case(&self.name) {
            return Err(ExplainerError::InvalidDescriptor {
                name: self.name.clone(),
                reason: "name must be snake_case".into(),
            });
        }
        let [p, n, u] = self.texts();
        for (field, text) in [
            ("positive_text", p),
            ("negative_text", n),
            ("neutral_text", u),
        ] {
            if text.trim().is_empty() {
                return Err(ExplainerError::MissingTupleField {
                    name: self.name.clone(),
                    field: field.into(),
                });
            }
        }
        if p == n || p == u || n == u {
            return Err(ExplainerError::InvalidDescriptor {
                name: self.name.clone(),
                reason: "the three descriptions must be pairwise distinct".into(),
            });
        }
        Ok(())
    }
}

fn is_snake_case(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !s.ends_with('_')
        && !s.contains("__")
}

/// Validated, name-unique, ordered descriptor collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DescriptorLibrary {
    /// Where the library came from; echoed into report metadata.
    pub source: String,
    descriptors: Vec<ArtifactDescriptor>,
}

pub const DEFAULT_LIBRARY_SOURCE: &str = "builtin:default";
const DEFAULT_LIBRARY: &str = include_str!("../../data/default_descriptors.jsonl");
const FIELDS: [&str; 5] = [
    "name",
    "category",
    "positive_text",
    "negative_text",
    "neutral_text",
];

impl DescriptorLibrary {
    pub fn new(
        source: impl Into<String>,
        descriptors: Vec<ArtifactDescriptor>,
    ) -> Result<Self, ExplainerError> {
        let mut seen = HashSet::new();
        for d in &descriptors {
            d.validate()?;
            if !seen.insert(d.name.clone()) {
                return Err(ExplainerError::DuplicateArtifactName(d.name.clone()));
            }
        }
        if descriptors.is_empty() {
            return Err(ExplainerError::EmptyLibrary);
        }
        Ok(Self {
            source: source.into(),
            descriptors,
        })
    }

    /// The library shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LIBRARY_SOURCE, DEFAULT_LIBRARY).expect("shipped library is valid")
    }

    /// Parses JSON-lines text: one object per line; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(source: impl Into<String>, text: &str) -> Result<Self, ExplainerError> {
        let mut descriptors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            descriptors.push(parse_record(i + 1, line)?);
        }
        Self::new(source, descriptors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExplainerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExplainerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(path.display().to_string(), &text)
    }

    pub fn descriptors(&self) -> &[ArtifactDescriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ArtifactDescriptor> {
        self.descriptors.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Descriptors active for an image of `category`: that category's own plus
    /// the generic ones. `Generic` activates everything.
    pub fn select(&self, category: Category) -> Vec<&ArtifactDescriptor> {
        self.descriptors
            .iter()
            .filter(|d| {
                category == Category::Generic
                    || d.category == category
                    || d.category == Category::Generic
            })
            .collect()
    }
}

fn parse_record(line: usize, text: &str) -> Result<ArtifactDescriptor, ExplainerError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ExplainerError::ParseError {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(ExplainerError::ParseError {
            line,
            message: "record is not a JSON object".into(),
        });
    };
    let name = map
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if name.is_empty() {
        return Err(ExplainerError::ParseError {
            line,
            message: "record has no `name`".into(),
        });
    }
    if let Some(extra) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ExplainerError::ParseError {
            line,
            message: format!("unknown field `{extra}`"),
        });
    }
    let field = |key: &str| -> Result<String, ExplainerError> {
        match map.get(key) {
            None | Some(Value::Null) => Err(ExplainerError::MissingTupleField {
                name: name.clone(),
                field: key.into(),
            }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(ExplainerError::ParseError {
                line,
                message: format!("`{key}` must be a string"),
            }),
        }
    };
    let category = field("category")?
        .parse()
        .map_err(|message| ExplainerError::ParseError { line, message })?;
    Ok(ArtifactDescriptor {
        category,
        positive_text: field("positive_text")?,
        negative_text: field("negative_text")?,
        neutral_text: field("neutral_text")?,
        name,
    })
}
