//! Lenient parsers for backend text. First match wins; failures return `None`.

use serde_json::Value;

/// Integers inside the first `[...]`, or in the whole text when there are no brackets.
pub fn parse_list(text: &str) -> Option<Vec<i64>> {
    let body = match (text.find('['), text.find('[').and_then(|s| text[s..].find(']').map(|e| s + e))) {
        (Some(s), Some(e)) => &text[s + 1..e],
        _ => text,
    };
    let nums: Vec<i64> = body
        .split(|c: char| !(c.is_ascii_digit() || c == '-'))
        .filter(|t| !t.is_empty() && *t != "-")
        .filter_map(|t| t.parse().ok())
        .collect();
    if nums.is_empty() && !body.trim().is_empty() {
        return None;
    }
    Some(nums)
}

/// `[a, b, c]`, the list style used by the sorting prompts.
pub fn format_list(xs: &[i64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn list_from_value(v: &Value) -> Option<Vec<i64>> {
    v.as_array()?.iter().map(Value::as_i64).collect()
}

/// Classification label: the last line that is exactly a label, else the
/// first label word anywhere.
pub fn parse_label<'a>(text: &str, labels: &[&'a str]) -> Option<&'a str> {
    let lower = text.to_ascii_lowercase();
    for line in lower.lines().rev() {
        let l = line.trim().trim_end_matches('.');
        if let Some(hit) = labels.iter().find(|lab| **lab == l) {
            return Some(hit);
        }
    }
    let mut best: Option<(usize, &'a str)> = None;
    for lab in labels {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(lab) {
            let at = from + pos;
            let before = lower[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
            let after = lower[at + lab.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
            if before && after {
                if best.is_none_or(|(b, _)| at < b) {
                    best = Some((at, lab));
                }
                break;
            }
            from = at + lab.len();
        }
    }
    best.map(|(_, l)| l)
}

/// Text after the last "answer is:" marker, trimmed of the final period.
pub fn parse_answer(text: &str) -> String {
    let lower = text.to_ascii_lowercase();
    let idx = lower.rfind("answer is:").map(|i| i + "answer is:".len()).or_else(|| lower.rfind("answer is").map(|i| i + "answer is".len()));
    let raw = match idx {
        Some(i) => &text[i..],
        None => text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or(""),
    };
    raw.trim().trim_end_matches('.').trim().to_string()
}

/// The outermost `{...}` object in `text`, parsed as JSON.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Template-variable rendering of a JSON value: strings verbatim, integer
/// arrays in list style, anything else as compact JSON.
pub fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(_) => match list_from_value(v) {
            Some(xs) => format_list(&xs),
            None => v.to_string(),
        },
        other => other.to_string(),
    }
}
