use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const QUERY_PREFIX: &str = "Q: What are the useful features for distinguishing a ";
const QUERY_SUFFIX: &str = " in a photo? Please just give me a list of short phrases. Answer: -";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub class_name: String,
    pub query: String,
}

impl QueryRecord {
    pub fn new(class_name: &str) -> Result<Self> {
        Ok(Self {
            class_name: class_name.to_owned(),
            query: build_query(class_name)?,
        })
    }
}

/// The fixed question asked for every class. The trailing `-` nudges the
/// model into answering with a list.
pub fn build_query(class_name: &str) -> Result<String> {
    if class_name.trim().is_empty() {
        return Err(Error::InvalidClassName);
    }
    Ok(format!("{QUERY_PREFIX}{class_name}{QUERY_SUFFIX}"))
}

/// Splits a list-style answer into phrases, one per line, dropping bullet
/// markers, numbering, surrounding quotes and blank lines.
pub fn parse_phrases(response: &str) -> Vec<String> {
    response
        .lines()
        .map(|line| strip_quotes(strip_marker(line.trim())).trim().to_owned())
        .filter(|p| !p.is_empty())
        .collect()
}

fn strip_marker(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix(['-', '*', '•', '–', '—']) {
        return rest.trim_start();
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

fn strip_quotes(s: &str) -> &str {
    const QUOTES: [char; 6] = ['"', '\'', '`', '“', '”', '‘'];
    let s = s.trim();
    let s = s.strip_suffix(',').unwrap_or(s).trim_end();
    s.trim_start_matches(QUOTES)
        .trim_end_matches(QUOTES)
        .trim_end_matches(['’'])
}
