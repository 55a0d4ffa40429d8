//! Identifier rules.
//!
//! Every object name is restricted to `[a-z0-9-]{1,63}` so that pod and
//! container names can be used verbatim as directory names.

/// Longest accepted identifier.
pub const MAX_IDENTIFIER_LEN: usize = 63;

/// Returns `None` when `name` is a valid identifier, otherwise a reason.
pub fn identifier_problem(name: &str) -> Option<String> {
    if name.is_empty() {
        return Some("must not be empty".to_string());
    }
    if name.len() > MAX_IDENTIFIER_LEN {
        return Some(format!("longer than {MAX_IDENTIFIER_LEN} characters"));
    }
    if let Some(bad) = name
        .chars()
        .find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '-'))
    {
        return Some(format!("contains invalid character {bad:?}"));
    }
    None
}

pub fn is_identifier(name: &str) -> bool {
    identifier_problem(name).is_none()
}

/// Normalizes a mount path into a relative path with no `.`/`..`/empty
/// components. Returns `None` if the path escapes upward or is empty.
pub fn normalize_mount_path(raw: &str) -> Option<String> {
    let mut parts = Vec::new();
    for part in raw.split('/') {
        match part {
            "" | "." => {}
            ".." => return None,
            p => parts.push(p),
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("/"))
    }
}
