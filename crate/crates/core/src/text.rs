//! Caption tokenization shared by the lexicon loader and the mention matcher.

/// Characters that end a phrase: a multi-word match never spans them.
fn is_hard_break(c: char) -> bool {
    matches!(
        c,
        ',' | '.' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '"' | '\n'
    )
}

/// Lowercases `text` and splits it into tokens on non-alphanumeric boundaries.
///
/// Tokens are grouped into segments separated by sentence punctuation, so
/// `"cell, phone"` yields two segments while `"hot-dog"` stays one segment
/// of two tokens.
pub fn segments(text: &str) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut token = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            token.extend(c.to_lowercase());
            continue;
        }
        if !token.is_empty() {
            out.last_mut().unwrap().push(std::mem::take(&mut token));
        }
        if is_hard_break(c) && !out.last().unwrap().is_empty() {
            out.push(Vec::new());
        }
    }
    if !token.is_empty() {
        out.last_mut().unwrap().push(token);
    }
    out.retain(|s| !s.is_empty());
    out
}

/// All tokens of `text`, ignoring segment boundaries.
pub fn tokens(text: &str) -> Vec<String> {
    segments(text).into_iter().flatten().collect()
}

/// Canonical phrase key: tokens joined by single spaces.
pub fn phrase_key(text: &str) -> String {
    tokens(text).join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            segments("A Dog, and a hot-dog."),
            vec![vec!["a", "dog"], vec!["and", "a", "hot", "dog"]]
        );
    }

    #[test]
    fn empty_text_has_no_segments() {
        assert!(segments("").is_empty());
        assert!(segments(" ,.. ").is_empty());
    }

    #[test]
    fn phrase_key_collapses_whitespace() {
        assert_eq!(phrase_key("  Dining   Table "), "dining table");
    }
}
