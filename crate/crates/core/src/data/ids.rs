use std::collections::HashMap;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{KtError, Result};

/// Bijection between original id strings and internal indices `0..n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    forward: HashMap<String, usize>,
    reverse: Vec<String>,
}

impl IdMap {
    /// Builds a map from (original, index) pairs, rejecting duplicate or
    /// missing indices.
    pub fn from_pairs<I>(section: &str, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        let pairs: Vec<(String, usize)> = pairs.into_iter().collect();
        let n = pairs.len();
        let mut reverse: Vec<Option<String>> = vec![None; n];
        let mut forward = HashMap::with_capacity(n);
        for (key, idx) in pairs {
            if idx >= n {
                return Err(KtError::CorruptMapping {
                    section: section.to_string(),
                    detail: format!("index {idx} for '{key}' leaves a gap in 0..{n}"),
                });
            }
            if let Some(prev) = &reverse[idx] {
                return Err(KtError::CorruptMapping {
                    section: section.to_string(),
                    detail: format!("index {idx} assigned to both '{prev}' and '{key}'"),
                });
            }
            reverse[idx] = Some(key.clone());
            if forward.insert(key.clone(), idx).is_some() {
                return Err(KtError::CorruptMapping {
                    section: section.to_string(),
                    detail: format!("id '{key}' appears twice"),
                });
            }
        }
        Ok(IdMap {
            forward,
            reverse: reverse
                .into_iter()
                .map(|k| k.expect("bijection checked"))
                .collect(),
        })
    }

    /// Assigns indices in order of first appearance.
    pub fn from_ordered<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = IdMap::default();
        for id in ids {
            let id = id.into();
            if !map.forward.contains_key(&id) {
                map.forward.insert(id.clone(), map.reverse.len());
                map.reverse.push(id);
            }
        }
        map
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn index(&self, original: &str) -> Option<usize> {
        self.forward.get(original).copied()
    }

    pub fn original(&self, index: usize) -> Option<&str> {
        self.reverse.get(index).map(String::as_str)
    }

    fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (idx, key) in self.reverse.iter().enumerate() {
            obj.insert(key.clone(), Value::from(idx));
        }
        Value::Object(obj)
    }
}

/// The `keyid2idx.json` mapping file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMaps {
    pub questions: IdMap,
    pub concepts: IdMap,
    pub users: IdMap,
}

const SECTIONS: [&str; 3] = ["questions", "concepts", "uid"];

fn parse_section(section: &str, value: &Value) -> Result<IdMap> {
    let obj = value
        .as_object()
        .ok_or_else(|| KtError::Schema(format!("section '{section}' must be an object")))?;
    let mut pairs = Vec::with_capacity(obj.len());
    for (key, v) in obj {
        let idx = v.as_u64().ok_or_else(|| {
            KtError::Schema(format!(
                "section '{section}': value for '{key}' is not a non-negative integer"
            ))
        })?;
        pairs.push((key.clone(), idx as usize));
    }
    IdMap::from_pairs(section, pairs)
}

impl IdMaps {
    /// Parses the JSON text. `questions` is mandatory; `concepts` and `uid`
    /// default to empty maps, reported through the returned warnings.
    pub fn from_json_str(text: &str) -> Result<(Self, Vec<String>)> {
        let root: Value = serde_json::from_str(text)?;
        let obj = root
            .as_object()
            .ok_or_else(|| KtError::Schema("keyid2idx root must be an object".into()))?;
        let mut warnings = Vec::new();
        for key in obj.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                warnings.push(format!("ignoring unknown keyid2idx section '{key}'"));
            }
        }
        let questions = match obj.get("questions") {
            Some(v) => parse_section("questions", v)?,
            None => {
                return Err(KtError::Schema(
                    "keyid2idx is missing the 'questions' section".into(),
                ))
            }
        };
        let mut optional = |name: &str| -> Result<IdMap> {
            match obj.get(name) {
                Some(v) => parse_section(name, v),
                None => {
                    warnings.push(format!(
                        "keyid2idx has no '{name}' section; treating it as empty"
                    ));
                    Ok(IdMap::default())
                }
            }
        };
        let concepts = optional("concepts")?;
        let users = optional("uid")?;
        Ok((
            IdMaps {
                questions,
                concepts,
                users,
            },
            warnings,
        ))
    }

    pub fn to_json_string(&self) -> String {
        let mut root = Map::new();
        root.insert("questions".into(), self.questions.to_json());
        root.insert("concepts".into(), self.concepts.to_json());
        root.insert("uid".into(), self.users.to_json());
        serde_json::to_string(&Value::Object(root)).expect("maps serialize")
    }
}

/// Reads `keyid2idx.json`, logging any warnings.
pub fn parse_keyid2idx(path: impl AsRef<Path>) -> Result<IdMaps> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
    let (maps, warnings) = IdMaps::from_json_str(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_section_example() {
        let (maps, warnings) =
            IdMaps::from_json_str(r#"{"questions": {"355": 0, "1545": 1}}"#).unwrap();
        assert_eq!(maps.questions.len(), 2);
        assert_eq!(maps.questions.index("355"), Some(0));
        assert_eq!(maps.questions.original(1), Some("1545"));
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn empty_mapping_is_fine() {
        let (maps, _) =
            IdMaps::from_json_str(r#"{"questions": {}, "concepts": {}, "uid": {}}"#).unwrap();
        assert!(maps.questions.is_empty());
    }

    #[test]
    fn duplicate_index_is_corrupt() {
        let err = IdMaps::from_json_str(r#"{"questions": {"355": 0, "827": 0}}"#).unwrap_err();
        assert!(matches!(err, KtError::CorruptMapping { .. }), "{err}");
    }

    #[test]
    fn gap_is_corrupt_and_missing_questions_is_schema() {
        let err = IdMaps::from_json_str(r#"{"questions": {"355": 0, "827": 2}}"#).unwrap_err();
        assert!(matches!(err, KtError::CorruptMapping { .. }));
        let err = IdMaps::from_json_str(r#"{"concepts": {}}"#).unwrap_err();
        assert!(matches!(err, KtError::Schema(_)));
    }

    #[test]
    fn json_round_trip() {
        let maps = IdMaps {
            questions: IdMap::from_ordered(["a", "b"]),
            concepts: IdMap::from_ordered(["k"]),
            users: IdMap::from_ordered(["u1", "u2", "u3"]),
        };
        let (back, warnings) = IdMaps::from_json_str(&maps.to_json_string()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, maps);
    }
}
