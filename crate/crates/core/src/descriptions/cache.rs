use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{pointer_token, read_json, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheMeta {
    pub model: String,
    pub temperature: f64,
    /// RFC 3339 timestamp of the last retrieval.
    pub created: String,
}

/// Phrases per class name. Serialized with sorted class keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionCache {
    pub meta: CacheMeta,
    pub classes: BTreeMap<String, Vec<String>>,
}

impl DescriptionCache {
    pub fn new(model: &str, temperature: f64) -> Self {
        Self {
            meta: CacheMeta {
                model: model.to_owned(),
                temperature,
                created: now_rfc3339(),
            },
            classes: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cache: Self = read_json(path)?;
        cache.validate()?;
        Ok(cache)
    }

    /// Loads `path` if it exists, otherwise starts an empty cache.
    pub fn load_or_new(path: &Path, model: &str, temperature: f64) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new(model, temperature))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.classes.contains_key(class_name)
    }

    pub fn phrases(&self, class_name: &str) -> Option<&[String]> {
        self.classes.get(class_name).map(Vec::as_slice)
    }

    /// Every class needs at least one non-empty, trimmed phrase.
    pub fn validate(&self) -> Result<()> {
        for (name, phrases) in &self.classes {
            let at = format!("/classes/{}", pointer_token(name));
            if name.trim().is_empty() {
                return Err(Error::Schema {
                    pointer: at,
                    message: "class name must be non-empty".into(),
                });
            }
            if phrases.is_empty() {
                return Err(Error::Schema {
                    pointer: at,
                    message: "class has no phrases".into(),
                });
            }
            if let Some(i) = phrases.iter().position(|p| p.is_empty() || p.trim() != p) {
                return Err(Error::Schema {
                    pointer: format!("{at}/{i}"),
                    message: "phrases must be non-empty and trimmed".into(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
