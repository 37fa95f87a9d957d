//! Text normalization shared by the graph store, extraction and grounding.

/// Canonical dedup key for a task or subtask string.
///
/// Collapses whitespace runs, trims, strips trailing `.`, `!` and `?`, and
/// lowercases. The result may be empty; callers decide whether that is an error.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed.trim_end_matches(|c: char| matches!(c, '.' | '!' | '?') || c.is_whitespace());
    stripped.to_lowercase()
}

/// Lowercased alphanumeric tokens, used by the hashing embedder.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Replaces line breaks so a value can sit on one prompt line.
pub(crate) fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize("  Go to  the\tFridge. "), "go to the fridge");
        assert_eq!(normalize("Exit!?"), "exit");
        assert_eq!(normalize("wait . . "), "wait");
        assert_eq!(normalize(" ...  "), "");
        assert_eq!(normalize("Mr. Smith's room"), "mr. smith's room");
    }

    #[test]
    fn normalize_is_idempotent() {
        for s in ["A  b.", "HELLO world!!", "  x ? "] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn tokens_split_on_punctuation() {
        assert_eq!(tokens("Walk past the sofa, then stop."), vec!["walk", "past", "the", "sofa", "then", "stop"]);
    }
}
