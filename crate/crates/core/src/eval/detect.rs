use std::sync::LazyLock;

use regex::Regex;

static STREET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+ \w+ street").expect("valid regex"));
static PHONE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\( ?\d{3} ?\) ?\d{3} ?- ?\d{4}").expect("valid regex"));

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `text` contains a street address (`42 oak street`) or a phone
/// number (`( 555 ) 123 - 4567`) in the synthetic record format.
pub fn detect_sensitive(text: &str) -> bool {
    let t = normalize(text);
    STREET.is_match(&t) || PHONE.is_match(&t)
}
