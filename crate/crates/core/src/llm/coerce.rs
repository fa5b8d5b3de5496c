use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoerceError {
    #[error("empty reply")]
    Empty,
    #[error("no JSON document found in reply")]
    Unrepairable(String),
}

/// Turns a model reply into a JSON document.
///
/// Valid JSON is returned as is. Otherwise code fences and surrounding prose
/// are stripped, then the first balanced object or array that parses is
/// taken. Nothing is rewritten inside a document: a trailing comma or a
/// missing quote stays unrepairable.
pub fn coerce_structured(raw: &str) -> Result<Value, CoerceError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CoerceError::Empty);
    }
    if let Ok(doc) = serde_json::from_str(trimmed) {
        return Ok(doc);
    }
    if let Some(inner) = strip_fences(trimmed) {
        if let Ok(doc) = serde_json::from_str(inner.trim()) {
            return Ok(doc);
        }
        if let Some(doc) = first_balanced_document(inner) {
            return Ok(doc);
        }
    }
    first_balanced_document(trimmed).ok_or_else(|| CoerceError::Unrepairable(raw.to_owned()))
}

/// The text between the first code-fence line and the next fence.
fn strip_fences(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after_marker = &text[open + 3..];
    // skip a language tag such as `json` on the fence line
    let body_start = after_marker.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after_marker[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// Scans for `{` / `[` and returns the first balanced span that parses. A
/// balanced span that does not parse is skipped whole, so a broken document
/// never yields one of its own members.
fn first_balanced_document(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find(['{', '[']) {
        let open = start + offset;
        start = match matching_close(bytes, open) {
            Some(close) => match serde_json::from_str(&text[open..=close]) {
                Ok(doc) => return Some(doc),
                Err(_) => close + 1,
            },
            None => open + 1,
        };
    }
    None
}

/// Index of the bracket closing the one at `open`, skipping brackets inside
/// string literals.
fn matching_close(bytes: &[u8], open: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
