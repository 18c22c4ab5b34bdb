//! JSON model files.
//!
//! ```json
//! {
//!   "name": "binary-half",
//!   "atoms": [{ "weight": 1.0, "fragments": [0.5, 0.5] }],
//!   "defaults": { "dx": 0.01, "x_max": 32, "horizon": 50, "block_cap": 500, "trials": 4000 }
//! }
//! ```

use std::fmt;
use std::path::Path;

use fragwave::{DislocationMeasure, FragmentVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub name: String,
    pub atoms: Vec<AtomEntry>,
    #[serde(default)]
    pub defaults: Defaults,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomEntry {
    pub weight: f64,
    pub fragments: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub dx: Option<f64>,
    pub x_max: Option<f64>,
    pub horizon: Option<f64>,
    pub block_cap: Option<usize>,
    pub trials: Option<u64>,
}

/// A parsed model together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub origin: String,
    pub text: String,
    pub file: SpecFile,
    pub measure: DislocationMeasure,
}

#[derive(Debug)]
pub struct SpecError {
    origin: String,
    line: Option<usize>,
    column: Option<usize>,
    field: String,
    message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let (Some(line), Some(col)) = (self.line, self.column) {
            write!(f, ":{line}:{col}")?;
        }
        if !self.field.is_empty() {
            write!(f, ": field `{}`", self.field)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for SpecError {}

pub fn load(path: &Path) -> anyhow::Result<LoadedSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read spec file {}: {e}", path.display()))?;
    Ok(parse(&path.display().to_string(), &text)?)
}

pub fn parse(origin: &str, text: &str) -> Result<LoadedSpec, SpecError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: SpecFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        SpecError {
            origin: origin.to_string(),
            line: Some(inner.line()),
            column: Some(inner.column()),
            field: if field == "." { String::new() } else { field },
            message: inner.to_string(),
        }
    })?;
    let measure = build_measure(origin, text, &file)?;
    Ok(LoadedSpec {
        origin: origin.to_string(),
        text: text.to_string(),
        file,
        measure,
    })
}

fn build_measure(
    origin: &str,
    text: &str,
    file: &SpecFile,
) -> Result<DislocationMeasure, SpecError> {
    let semantic = |field: String, index: Option<usize>, message: String| SpecError {
        origin: origin.to_string(),
        line: index.and_then(|i| atom_line(text, i)),
        column: index.and_then(|i| atom_line(text, i)).map(|_| 1),
        field,
        message,
    };
    if file.atoms.is_empty() {
        return Err(semantic(
            "atoms".into(),
            None,
            "at least one atom is required".into(),
        ));
    }
    let atoms = file
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            FragmentVector::new(a.fragments.clone())
                .map(|f| (a.weight, f))
                .map_err(|e| semantic(format!("atoms[{i}].fragments"), Some(i), e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (i, a) in file.atoms.iter().enumerate() {
        if !(a.weight.is_finite() && a.weight > 0.0) {
            return Err(semantic(
                format!("atoms[{i}].weight"),
                Some(i),
                format!("must be finite and > 0 (got {})", a.weight),
            ));
        }
    }
    DislocationMeasure::new(atoms).map_err(|e| semantic("atoms".into(), None, e.to_string()))
}

/// Line of the `index`-th object inside the top-level `atoms` array.
fn atom_line(text: &str, index: usize) -> Option<usize> {
    let start = text.find("\"atoms\"")?;
    let open = start + text[start..].find('[')?;
    let mut depth = 0usize;
    let mut seen = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, ch) in text[open + 1..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' | '[' => {
                if depth == 0 && ch == '{' {
                    if seen == index {
                        let pos = open + 1 + offset;
                        return Some(text[..pos].matches('\n').count() + 1);
                    }
                    seen += 1;
                }
                depth += 1;
            }
            '}' => depth = depth.saturating_sub(1),
            ']' if depth == 0 => return None,
            ']' => depth -= 1,
            _ => {}
        }
    }
    None
}
