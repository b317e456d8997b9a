use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::DescriptionCache;
use super::encoder::TextEncoder;
use crate::alignment::ClassDescriptors;
use crate::error::{Error, Result};
use crate::io::{pointer_token, read_json, write_json};
use crate::numerics::{norm, EmbeddingMatrix, Matrix};

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEmbedding {
    pub descriptors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
}

/// Descriptor rows and optional anchor per class name, all unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub classes: BTreeMap<String, ClassEmbedding>,
}

impl EmbeddingStore {
    pub fn load(path: &Path) -> Result<Self> {
        let store: Self = read_json(path)?;
        store.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.keys().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |pointer: String, message: &str| Error::Schema {
            pointer,
            message: message.to_owned(),
        };
        if self.dim == 0 {
            return Err(schema("/dim".into(), "dim must be positive"));
        }
        for (name, class) in &self.classes {
            let at = format!("/classes/{}", pointer_token(name));
            if class.descriptors.is_empty() {
                return Err(schema(format!("{at}/descriptors"), "no descriptor rows"));
            }
            let rows = class
                .descriptors
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("{at}/descriptors/{i}"), r));
            let anchor = class.anchor.iter().map(|a| (format!("{at}/anchor"), a));
            for (pointer, row) in rows.chain(anchor) {
                if row.len() != self.dim {
                    return Err(schema(pointer, "length differs from dim"));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(schema(pointer, "non-finite entry"));
                }
                if (norm(row) - 1.0).abs() > UNIT_TOL {
                    return Err(schema(pointer, "row is not unit-norm"));
                }
            }
        }
        Ok(())
    }

    fn get(&self, name: &str) -> Result<&ClassEmbedding> {
        self.classes
            .get(name)
            .ok_or_else(|| Error::MissingDescriptors(name.to_owned()))
    }

    /// Descriptor blocks in the order of `names`.
    pub fn descriptors_for(&self, names: &[String]) -> Result<ClassDescriptors> {
        let blocks = names
            .iter()
            .map(|n| EmbeddingMatrix::from_rows(&self.get(n)?.descriptors))
            .collect::<Result<Vec<_>>>()?;
        ClassDescriptors::new(blocks)
    }

    /// Anchor rows in the order of `names`; every class needs an anchor.
    pub fn anchors_for(&self, names: &[String]) -> Result<Matrix> {
        let rows = names
            .iter()
            .map(|n| {
                self.get(n)?.anchor.clone().ok_or_else(|| Error::Schema {
                    pointer: format!("/classes/{}/anchor", pointer_token(n)),
                    message: "anchor required".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Encodes every cached phrase into a descriptor row and every class name
/// into its anchor. Phrases are not deduplicated.
pub fn embed_descriptions(
    cache: &DescriptionCache,
    encoder: &dyn TextEncoder,
) -> Result<EmbeddingStore> {
    if cache.classes.is_empty() {
        return Err(Error::MissingDescriptors("<all>".into()));
    }
    let mut classes = BTreeMap::new();
    for (name, phrases) in &cache.classes {
        if phrases.is_empty() {
            return Err(Error::MissingDescriptors(name.clone()));
        }
        let descriptors = phrases
            .iter()
            .map(|p| encoder.encode(p))
            .collect::<Result<Vec<_>>>()?;
        classes.insert(
            name.clone(),
            ClassEmbedding {
                descriptors,
                anchor: Some(encoder.encode(name)?),
            },
        );
    }
    Ok(EmbeddingStore {
        dim: encoder.dim(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptions::MockEncoder;

    fn cache_with(phrases: &[&str]) -> DescriptionCache {
        let mut c = DescriptionCache::new("m", 0.7);
        c.classes.insert(
            "bird".into(),
            phrases.iter().map(|p| p.to_string()).collect(),
        );
        c
    }

    #[test]
    fn one_row_per_phrase_without_dedup() {
        let enc = MockEncoder::new(8, 1).unwrap();
        let store = embed_descriptions(&cache_with(&["wings", "beak", "wings"]), &enc).unwrap();
        let rows = &store.classes["bird"].descriptors;
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[2]);
        assert_ne!(rows[0], rows[1]);
        assert_eq!(store.dim, 8);
        store.validate().unwrap();
    }

    #[test]
    fn empty_class_is_missing_descriptors() {
        let enc = MockEncoder::new(8, 1).unwrap();
        assert!(matches!(
            embed_descriptions(&cache_with(&[]), &enc),
            Err(Error::MissingDescriptors(n)) if n == "bird"
        ));
    }

    #[test]
    fn validation_points_at_bad_rows() {
        let enc = MockEncoder::new(4, 1).unwrap();
        let mut store = embed_descriptions(&cache_with(&["a", "b"]), &enc).unwrap();
        store.classes.get_mut("bird").unwrap().descriptors[1] = vec![1.0, 1.0, 0.0, 0.0];
        match store.validate() {
            Err(Error::Schema { pointer, .. }) => {
                assert_eq!(pointer, "/classes/bird/descriptors/1")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lookups_follow_requested_order() {
        let enc = MockEncoder::new(4, 3).unwrap();
        let mut cache = cache_with(&["a"]);
        cache.classes.insert("ant".into(), vec!["legs".into()]);
        let store = embed_descriptions(&cache, &enc).unwrap();
        let names = vec!["bird".to_owned(), "ant".to_owned()];
        let anchors = store.anchors_for(&names).unwrap();
        assert_eq!(
            anchors.row(0),
            store.classes["bird"].anchor.as_deref().unwrap()
        );
        assert_eq!(store.descriptors_for(&names).unwrap().class_count(), 2);
        assert!(store.anchors_for(&["cat".to_owned()]).is_err());
    }
}
