//! Word-level matching between question text and schema identifiers.

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "by", "did", "do", "does", "each", "for",
    "from", "give", "has", "have", "how", "in", "is", "it", "its", "list", "many", "me", "more", "most", "much",
    "of", "on", "or", "show", "than", "that", "the", "their", "them", "there", "these", "they", "this", "those",
    "to", "was", "were", "what", "when", "where", "which", "who", "whose", "with",
];

/// Lowercase word stems of `text`: splits on non-alphanumerics and camelCase
/// boundaries, strips plural endings and drops stopwords and bare numbers.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for word in split_words(text) {
        if word.len() < 2 || word.chars().all(|c| c.is_ascii_digit()) || STOPWORDS.contains(&word.as_str()) {
            continue;
        }
        let stem = stem(&word);
        if !stem.is_empty() && !out.contains(&stem) {
            out.push(stem);
        }
    }
    out
}

fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for ch in text.chars() {
        if !ch.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if ch.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
        cur.extend(ch.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

fn stem(word: &str) -> String {
    if word.len() > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if word.len() > 4 && (word.ends_with("sses") || word.ends_with("xes") || word.ends_with("ches")) {
        return word[..word.len() - 2].to_string();
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is")
    {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Equal stems, or one a prefix of the other when the shorter has at least
/// three letters (`emp` matches `employee`).
pub fn stems_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    short.len() >= 3 && long.starts_with(short)
}

/// Whether any word of identifier `name` matches any of `question_tokens`.
pub fn name_matches(question_tokens: &[String], name: &str) -> bool {
    tokens(name)
        .iter()
        .any(|n| question_tokens.iter().any(|q| stems_match(n, q)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_and_stems() {
        assert_eq!(tokens("How many employees are there?"), vec!["employee"]);
        assert_eq!(tokens("List the companies' headCount in 2020"), vec!["company", "head", "count"]);
        assert_eq!(tokens("dept_id"), vec!["dept", "id"]);
        assert_eq!(tokens("classes status"), vec!["class", "status"]);
    }

    #[test]
    fn prefix_matching() {
        let q = tokens("How many employees are there?");
        assert!(name_matches(&q, "emp"));
        assert!(name_matches(&q, "Employee"));
        assert!(!name_matches(&q, "dept"));
        assert!(!stems_match("id", "idea"));
    }
}
