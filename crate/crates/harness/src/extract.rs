//! Pull an option label out of a free-form model reply.

use regex::Regex;

/// Recorded in place of a label when none could be extracted.
pub const UNPARSED: &str = "unparsed";

fn alternation(options: &[&str]) -> String {
    let mut labels: Vec<&str> = options.iter().copied().filter(|o| !o.is_empty()).collect();
    // Longest first so `AB` wins over `A`.
    labels.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    labels.dedup();
    labels
        .iter()
        .map(|l| regex::escape(l))
        .collect::<Vec<_>>()
        .join("|")
}

/// The option the reply commits to, or `None`.
///
/// The last `(X)` or `X` right after an answer phrase ("answer is",
/// "Answer:", "option", "choice") wins. Without either, the last standalone
/// occurrence of a label is used.
pub fn extract_answer(text: &str, options: &[&str]) -> Option<String> {
    let alt = alternation(options);
    if alt.is_empty() {
        return None;
    }
    let marked = Regex::new(&format!(
        r"(?:\(\s*({alt})\s*\))|(?i:answer|option|choice)\s*(?:is|:|=|-)?\s*(?:(?i:option)\s+)?[*_\[\(]*\s*({alt})(?:[^\p{{L}}\p{{N}}_]|$)"
    ))
    .expect("escaped labels form a valid pattern");
    let last_marked = marked
        .captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .max_by_key(|m| m.start());
    if let Some(m) = last_marked {
        return Some(m.as_str().to_string());
    }
    let standalone = Regex::new(&format!(
        r"(?:^|[^\p{{L}}\p{{N}}_])({alt})(?:[^\p{{L}}\p{{N}}_]|$)"
    ))
    .expect("escaped labels form a valid pattern");
    // Matches consume one boundary character, so scan from every start
    // position to catch adjacent labels like "A B".
    let mut last = None;
    let mut at = 0;
    while let Some(c) = standalone.captures_at(text, at) {
        let m = c.get(1).expect("group 1 always participates");
        last = Some(m.as_str());
        at = m.end();
    }
    last.map(str::to_string)
}

/// [`extract_answer`] with [`UNPARSED`] standing in for `None`.
pub fn extract_label(text: &str, options: &[&str]) -> String {
    extract_answer(text, options).unwrap_or_else(|| UNPARSED.to_string())
}
