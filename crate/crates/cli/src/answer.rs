//! Final-answer extraction for math-style completions.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no answer found")]
pub struct NoAnswerFound;

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?|-?\.\d+").expect("valid regex"));

/// The contents of the last `\boxed{...}` in `text`, braces balanced.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts the last boxed expression, else the last number, and normalizes
/// it with [`normalize_answer`].
pub fn extract_answer(text: &str) -> Result<String, NoAnswerFound> {
    let raw = match last_boxed(text) {
        Some(b) => b.to_string(),
        None => NUMBER
            .find_iter(text)
            .last()
            .map(|m| m.as_str().to_string())
            .ok_or(NoAnswerFound)?,
    };
    let out = normalize_answer(&raw);
    if out.is_empty() {
        return Err(NoAnswerFound);
    }
    Ok(out)
}

/// Drops whitespace; plain decimals lose thousands separators, leading zeros
/// and trailing fractional zeros (`"003.50"` becomes `"3.5"`).
pub fn normalize_answer(raw: &str) -> String {
    let compact: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    let trimmed = compact.trim_end_matches('.');
    let plain = trimmed.replace(',', "");
    let (sign, digits) = match plain.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", plain.as_str()),
    };
    let numeric = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.matches('.').count() <= 1
        && digits.chars().any(|c| c.is_ascii_digit());
    if !numeric {
        return trimmed.to_string();
    }
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let int = int.trim_start_matches('0');
    let frac = frac.trim_end_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let body = if frac.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{frac}")
    };
    if body == "0" {
        body
    } else {
        format!("{sign}{body}")
    }
}

/// True iff both sides normalize to the same string.
pub fn answers_match(extracted: &str, reference: &str) -> bool {
    normalize_answer(extracted) == normalize_answer(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxed_wins() {
        assert_eq!(extract_answer("… so \\boxed{42}.").unwrap(), "42");
        assert_eq!(extract_answer("1 then \\boxed{7} and \\boxed{\\frac{1}{2}} 9").unwrap(), "\\frac{1}{2}");
    }

    #[test]
    fn last_number_fallback() {
        assert_eq!(extract_answer("answer is 3.50").unwrap(), "3.5");
        assert_eq!(extract_answer("from 2 to 1,000").unwrap(), "1000");
        assert_eq!(extract_answer("x = -007.").unwrap(), "-7");
    }

    #[test]
    fn nothing_to_extract() {
        assert_eq!(extract_answer(""), Err(NoAnswerFound));
        assert_eq!(extract_answer("no digits here"), Err(NoAnswerFound));
        assert_eq!(extract_answer("\\boxed{ }"), Err(NoAnswerFound));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer(" 0.50 "), "0.5");
        assert_eq!(normalize_answer("-0.0"), "0");
        assert_eq!(normalize_answer("x + 1"), "x+1");
        assert!(answers_match("12.0", "12"));
        assert!(!answers_match("12", "21"));
    }
}
