use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use crate::data::ids::IdMaps;
use crate::error::{KtError, Result};

/// Separator between levels of a KC route.
pub const ROUTE_SEPARATOR: &str = "----";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionInfo {
    pub content: Vec<String>,
    pub explanation: Vec<String>,
    pub kcs: Vec<usize>,
}

impl QuestionInfo {
    pub fn with_kcs(kcs: Vec<usize>) -> Self {
        QuestionInfo {
            kcs,
            ..QuestionInfo::default()
        }
    }
}

/// Auxiliary question metadata from `questions.json`, indexed by internal
/// question id. Text fields are kept as opaque tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionBank {
    questions: Vec<Option<QuestionInfo>>,
    /// Hierarchical route per internal KC index, root first, KC id last.
    pub kc_routes: BTreeMap<usize, Vec<String>>,
}

fn tokens(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::String(s)) => s.split_whitespace().map(str::to_string).collect(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(Value::Null) | None => Vec::new(),
        Some(other) => vec![other.to_string()],
    }
}

impl QuestionBank {
    pub fn from_infos(infos: Vec<QuestionInfo>) -> Self {
        QuestionBank {
            questions: infos.into_iter().map(Some).collect(),
            kc_routes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, question: usize) -> Option<&QuestionInfo> {
        self.questions.get(question).and_then(Option::as_ref)
    }

    pub fn kcs(&self, question: usize) -> Result<&[usize]> {
        self.get(question).map(|q| q.kcs.as_slice()).ok_or_else(|| {
            KtError::Data(format!("question {question} is not in the question bank"))
        })
    }

    /// Parses `questions.json` text against the id maps.
    pub fn from_json_str(text: &str, maps: &IdMaps) -> Result<(Self, Vec<String>)> {
        let root: Value = serde_json::from_str(text)?;
        let obj = root
            .as_object()
            .ok_or_else(|| KtError::Schema("questions.json root must be an object".into()))?;
        let mut warnings = Vec::new();
        let mut bank = QuestionBank {
            questions: vec![None; maps.questions.len()],
            kc_routes: BTreeMap::new(),
        };
        for (original, entry) in obj {
            let Some(q) = maps.questions.index(original) else {
                warnings.push(format!("question '{original}' has no internal id; skipped"));
                continue;
            };
            let entry = entry.as_object().ok_or_else(|| {
                KtError::Schema(format!("question '{original}' must be an object"))
            })?;
            let routes = match entry.get("kc_routes") {
                Some(Value::Array(r)) => r.clone(),
                Some(_) => {
                    return Err(KtError::Schema(format!(
                        "question '{original}': kc_routes must be a list"
                    )))
                }
                None => Vec::new(),
            };
            let mut kcs = Vec::new();
            for route in routes {
                let route = route.as_str().ok_or_else(|| {
                    KtError::Schema(format!("question '{original}': route is not a string"))
                })?;
                let parts: Vec<String> = route.split(ROUTE_SEPARATOR).map(str::to_string).collect();
                let leaf = parts.last().cloned().unwrap_or_default();
                let kc = maps.concepts.index(&leaf).ok_or_else(|| {
                    KtError::Schema(format!(
                        "question '{original}' references unknown KC '{leaf}'"
                    ))
                })?;
                if !kcs.contains(&kc) {
                    kcs.push(kc);
                }
                bank.kc_routes.entry(kc).or_insert(parts);
            }
            let explanation = tokens(
                entry
                    .get("analysis")
                    .or_else(|| entry.get("answer_explanation")),
            );
            bank.questions[q] = Some(QuestionInfo {
                content: tokens(entry.get("content")),
                explanation,
                kcs,
            });
        }
        Ok((bank, warnings))
    }

    /// Serializes in the same schema `from_json_str` reads.
    pub fn to_json_string(&self, maps: &IdMaps) -> Result<String> {
        let mut root = Map::new();
        for (q, info) in self.questions.iter().enumerate() {
            let Some(info) = info else { continue };
            let original = maps.questions.original(q).ok_or(KtError::Index {
                what: "question map",
                index: q,
                size: maps.questions.len(),
            })?;
            let mut routes = Vec::new();
            for &kc in &info.kcs {
                let route = match self.kc_routes.get(&kc) {
                    Some(r) => r.join(ROUTE_SEPARATOR),
                    None => maps
                        .concepts
                        .original(kc)
                        .ok_or(KtError::Index {
                            what: "concept map",
                            index: kc,
                            size: maps.concepts.len(),
                        })?
                        .to_string(),
                };
                routes.push(Value::String(route));
            }
            let mut entry = Map::new();
            entry.insert("content".into(), Value::String(info.content.join(" ")));
            entry.insert("analysis".into(), Value::String(info.explanation.join(" ")));
            entry.insert("kc_routes".into(), Value::Array(routes));
            root.insert(original.to_string(), Value::Object(entry));
        }
        Ok(serde_json::to_string(&Value::Object(root))?)
    }
}

pub fn parse_questions(path: impl AsRef<Path>, maps: &IdMaps) -> Result<QuestionBank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
    let (bank, warnings) = QuestionBank::from_json_str(&text, maps)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(bank)
}
