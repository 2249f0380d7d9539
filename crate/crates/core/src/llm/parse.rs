//! Structured-response parsing: lenient JSON extraction from model output.
//!
//! Real model output wraps payloads in markdown fences and prose, so the
//! default path strips fences and scans for the first balanced JSON object.
//! Strict mode requires the whole response to be a JSON object.

use std::collections::BTreeMap;

use super::{LlmError, LlmResponse};

/// Drops a surrounding markdown code fence (with optional language tag) if
/// present; otherwise returns the trimmed input.
pub fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(start) = trimmed.find("```") else {
        return trimmed;
    };
    let after = &trimmed[start + 3..];
    // Skip the optional language tag on the fence line.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

/// Finds the first balanced `{...}` region that parses as a JSON object.
pub fn extract_json_object(raw: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let text = strip_fences(raw);
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let open = search_from + rel;
        if let Some(end) = balanced_end(bytes, open) {
            if let Ok(serde_json::Value::Object(map)) =
                serde_json::from_str::<serde_json::Value>(&text[open..=end])
            {
                return Some(map);
            }
        }
        search_from = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

pub(crate) fn value_to_text(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Converts an extracted object into the response's key -> text map.
pub(crate) fn object_to_map(
    map: &serde_json::Map<String, serde_json::Value>,
) -> BTreeMap<String, String> {
    map.iter()
        .map(|(k, v)| (k.clone(), value_to_text(v)))
        .collect()
}

/// Extracts the value at `key` from the structured payload. Absent keys and
/// unparseable payloads are extraction failures carrying the raw text.
pub fn parse_field(response: &LlmResponse, key: &str) -> Result<String, LlmError> {
    let Some(parsed) = &response.parsed else {
        return Err(LlmError::Parse {
            detail: format!("no JSON object in response while looking for key \"{key}\""),
            raw: response.raw.clone(),
        });
    };
    match parsed.get(key) {
        Some(value) if !value.is_empty() => Ok(value.clone()),
        Some(_) => Err(LlmError::Parse {
            detail: format!("key \"{key}\" is empty"),
            raw: response.raw.clone(),
        }),
        None => Err(LlmError::Parse {
            detail: format!("key \"{key}\" missing from response object"),
            raw: response.raw.clone(),
        }),
    }
}

/// Strict variant of [`parse_field`]: the entire raw payload must be a JSON
/// object containing `key`.
pub fn parse_field_strict(response: &LlmResponse, key: &str) -> Result<String, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(response.raw.trim()).map_err(|e| LlmError::Parse {
            detail: format!("strict parse failed: {e}"),
            raw: response.raw.clone(),
        })?;
    let serde_json::Value::Object(map) = value else {
        return Err(LlmError::Parse {
            detail: "strict parse: payload is not an object".into(),
            raw: response.raw.clone(),
        });
    };
    match map.get(key) {
        Some(v) => Ok(value_to_text(v)),
        None => Err(LlmError::Parse {
            detail: format!("key \"{key}\" missing from response object"),
            raw: response.raw.clone(),
        }),
    }
}

/// Parses a numbered edit object (keys "1".."N", no gaps) into an ordered
/// list of edit descriptions.
pub fn parse_edit_list(response: &LlmResponse) -> Result<Vec<String>, LlmError> {
    let Some(parsed) = &response.parsed else {
        return Err(LlmError::Parse {
            detail: "no JSON object in decomposition response".into(),
            raw: response.raw.clone(),
        });
    };
    if parsed.is_empty() {
        return Err(LlmError::Parse {
            detail: "decomposition object is empty".into(),
            raw: response.raw.clone(),
        });
    }
    let mut numbered: Vec<(usize, &String)> = Vec::with_capacity(parsed.len());
    for (key, value) in parsed {
        let n: usize = key.parse().map_err(|_| LlmError::Parse {
            detail: format!("non-numeric edit key \"{key}\""),
            raw: response.raw.clone(),
        })?;
        numbered.push((n, value));
    }
    numbered.sort_by_key(|(n, _)| *n);
    for (expected, (n, _)) in numbered.iter().enumerate() {
        if *n != expected + 1 {
            return Err(LlmError::Parse {
                detail: format!("edit keys must run 1..N without gaps; saw {n}"),
                raw: response.raw.clone(),
            });
        }
    }
    Ok(numbered.into_iter().map(|(_, v)| v.clone()).collect())
}

/// Best-effort code extraction for roles that respond with raw code rather
/// than JSON: the fenced block if present, else the trimmed response.
pub fn extract_code(raw: &str) -> String {
    strip_fences(raw).to_string()
}
