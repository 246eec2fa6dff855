const WRAPPING: &[char] = &[
    '(', ')', '[', ']', '{', '}', '.', ',', ';', ':', '!', '?', '"', '\'', '`', '*',
];

fn normalize(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let stripped = lowered.trim_matches(|c: char| WRAPPING.contains(&c) || c.is_whitespace());
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether a predicted answer equals the reference after normalisation:
/// trimmed, case-folded, stripped of wrapping punctuation and choice
/// parentheses, whitespace collapsed, and compared numerically when both
/// sides are numbers.
pub fn match_answer(predicted: &str, ground_truth: &str) -> bool {
    let p = normalize(predicted);
    let g = normalize(ground_truth);
    if p == g {
        return true;
    }
    match (p.parse::<f64>(), g.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_rules() {
        assert!(match_answer("(B)", "B"));
        assert!(match_answer(" 42.0", "42"));
        assert!(!match_answer("7", "8"));
        assert!(match_answer("  The   Cat. ", "the cat"));
        assert!(match_answer("-3", "-3.00"));
        assert!(!match_answer("-3", "3"));
        assert!(!match_answer("", "0"));
    }
}
