//! Controller completion grammar: `<OPTION> [param] | subgoal: <text>`.
//!
//! The parser is forgiving: keywords are matched case-insensitively as
//! whole words anywhere before the `|`, and a missing subgoal is allowed.

use super::{AgentOption, OptionKind};

/// Returns `None` when no option keyword is found or MOVE has no target;
/// callers fall back to REFLECT.
pub fn parse_option(completion: &str) -> Option<(AgentOption, String)> {
    let (head, tail) = match completion.find('|') {
        Some(i) => (&completion[..i], &completion[i + 1..]),
        None => (completion, ""),
    };
    let subgoal = extract_subgoal(tail).or_else(|| extract_subgoal(head)).unwrap_or_default();
    let head = match find_ci(head, "subgoal:") {
        Some(i) => &head[..i],
        None => head,
    };

    let mut best: Option<(usize, OptionKind)> = None;
    for kind in [OptionKind::Talk, OptionKind::Move, OptionKind::Reflect] {
        if let Some(pos) = find_word_ci(head, kind.as_str()) {
            if best.is_none_or(|(p, _)| pos < p) {
                best = Some((pos, kind));
            }
        }
    }
    let (pos, kind) = best?;
    let option = match kind {
        OptionKind::Move => {
            let param = head[pos + 4..]
                .trim()
                .trim_start_matches(|c: char| c == ':' || c == '-' || c.is_whitespace())
                .trim_start_matches("to ")
                .trim()
                .trim_end_matches(['.', ',', ';'])
                .trim();
            if param.is_empty() {
                return None;
            }
            AgentOption::move_to(param)
        }
        OptionKind::Talk => AgentOption::talk(),
        OptionKind::Reflect => AgentOption::reflect(),
    };
    Some((option, subgoal))
}

fn extract_subgoal(s: &str) -> Option<String> {
    let i = find_ci(s, "subgoal:")?;
    let text = s[i + "subgoal:".len()..].trim();
    (!text.is_empty()).then(|| text.to_string())
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().find(&needle.to_ascii_lowercase())
}

fn find_word_ci(haystack: &str, word: &str) -> Option<usize> {
    let lower = haystack.to_ascii_lowercase();
    let word = word.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut start = 0;
    while let Some(rel) = lower[start..].find(&word) {
        let i = start + rel;
        let before_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let end = i + word.len();
        let after_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return Some(i);
        }
        start = i + 1;
    }
    None
}
