use std::fs;
use std::path::Path;

use super::InstanceError;
use crate::model::{validate_instance, ProblemInstance};

/// Parses, canonicalizes and validates an instance document.
pub fn parse_instance(text: &str) -> Result<ProblemInstance, InstanceError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: ProblemInstance = serde_path_to_error::deserialize(de).map_err(|e| InstanceError::Parse {
        location: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let (instance, _) = parsed.canonicalize();
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        return Err(InstanceError::Invalid(violations));
    }
    Ok(instance)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance, InstanceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_instance(&text)
}

/// Pretty-printed JSON. Floats use the shortest representation that parses
/// back to the same value.
pub fn to_json(instance: &ProblemInstance) -> String {
    let mut s = serde_json::to_string_pretty(instance).expect("instances always serialize");
    s.push('\n');
    s
}

pub fn save_instance(instance: &ProblemInstance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    fs::write(path, to_json(instance)).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })
}
