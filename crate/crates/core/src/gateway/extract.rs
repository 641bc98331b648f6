//! Pulls a JSON document out of free model output.
//!
//! Tried in order: the whole text, the contents of each code fence, then the
//! first balanced `{...}` or `[...]` span that parses.

use serde_json::Value;

const MAX_SPAN_STARTS: usize = 256;

pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    for block in fenced_blocks(trimmed) {
        if let Ok(v) = serde_json::from_str(block.trim()) {
            return Some(v);
        }
    }
    first_balanced(trimmed)
}

/// Bodies of ``` fenced blocks, with any language tag line removed.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = match after.find('\n') {
            Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => nl + 1,
            _ => 0,
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                // unterminated fence: take the remainder
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

fn first_balanced(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let starts = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'{' || b == b'[')
        .map(|(i, _)| i)
        .take(MAX_SPAN_STARTS);
    for start in starts {
        if let Some(end) = matching_close(bytes, start) {
            if let Ok(v) = serde_json::from_str(&text[start..=end]) {
                return Some(v);
            }
        }
    }
    None
}

fn matching_close(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn direct() {
        assert_eq!(extract_json(r#"{"a": 1}"#), Some(json!({"a": 1})));
        assert_eq!(extract_json("  [1, 2] "), Some(json!([1, 2])));
    }

    #[test]
    fn fenced() {
        let raw = "```json\n{\"features\": []}\n```";
        assert_eq!(extract_json(raw), Some(json!({"features": []})));
        let raw = "Here you go:\n```\n[{\"x\": \"y\"}]\n```\nThanks";
        assert_eq!(extract_json(raw), Some(json!([{"x": "y"}])));
    }

    #[test]
    fn prose_wrapped() {
        let raw = "Sure! The answer is {\"conclusion\": \"(A) {braces} in text\"} as requested.";
        assert_eq!(
            extract_json(raw),
            Some(json!({"conclusion": "(A) {braces} in text"}))
        );
        let raw = "note [see below] then {\"k\": [1, {\"n\": \"]\"}]}";
        assert_eq!(extract_json(raw), Some(json!({"k": [1, {"n": "]"}]})));
    }

    #[test]
    fn garbage() {
        assert_eq!(extract_json(""), None);
        assert_eq!(extract_json("no json here"), None);
        assert_eq!(extract_json("{\"unterminated\": "), None);
        assert_eq!(extract_json("{ not: json }"), None);
    }
}
