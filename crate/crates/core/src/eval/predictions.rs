use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};

/// Question id → answer text, `""` meaning no answer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predictions {
    answers: BTreeMap<String, String>,
}

impl Predictions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, answer: impl Into<String>) -> Result<()> {
        let id = id.into();
        if self.answers.contains_key(&id) {
            return Err(Error::DuplicatePrediction(id));
        }
        self.answers.insert(id, answer.into());
        Ok(())
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut p = Predictions::new();
        for (k, v) in pairs {
            p.insert(k, v)?;
        }
        Ok(p)
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.answers.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.answers).expect("string map serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_predictions(&bytes)
    }
}

struct Strict(std::result::Result<BTreeMap<String, String>, String>);

impl<'de> Deserialize<'de> for Strict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Strict;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping question ids to answer strings")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Strict, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    if out.contains_key(&k) {
                        return Ok(Strict(Err(k)));
                    }
                    out.insert(k, v);
                }
                Ok(Strict(Ok(out)))
            }
        }
        d.deserialize_map(V)
    }
}

/// Parses a predictions file, rejecting repeated question ids.
pub fn parse_predictions(bytes: &[u8]) -> Result<Predictions> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let Strict(parsed) = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    parsed
        .map(|answers| Predictions { answers })
        .map_err(Error::DuplicatePrediction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_rejected() {
        let err = parse_predictions(br#"{"q1": "a", "q2": "", "q1": "b"}"#).unwrap_err();
        assert!(matches!(err, Error::DuplicatePrediction(id) if id == "q1"));
        let p = parse_predictions(br#"{"q1": "a", "q2": ""}"#).unwrap();
        assert_eq!(p.get("q2"), Some(""));
        assert!(Predictions::from_pairs([("x", "1"), ("x", "2")]).is_err());
    }

    #[test]
    fn non_string_answers_report_a_path() {
        assert!(matches!(parse_predictions(br#"{"q1": 3}"#), Err(Error::Schema { .. })));
    }
}
