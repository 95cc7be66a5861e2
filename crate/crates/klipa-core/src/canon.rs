//! Entity identity. Two surface strings name the same entity when their
//! canonical keys are equal; the metrics harness uses the same rule.

/// Trim, collapse internal whitespace to single spaces.
pub fn display_form(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// [`display_form`] followed by Unicode lowercasing.
pub fn canonical_key(surface: &str) -> String {
    display_form(surface).to_lowercase()
}
