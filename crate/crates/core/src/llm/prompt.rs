use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const INSTRUCTION: &str = "For the provided text, choose one of the best matching label from the provided categories. \
If none fits, propose a new label that is distinct from existing categories. \
The proposed new label must be a specific, concrete name (not generic).";

const TEXT_OPEN: &str = "\n[TEXT]\n";
const ANSWER: &str = "\n\n[Answer Below]";

/// A rendered taxonomy prompt together with the parts it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub rendered_text: String,
    pub categories: Vec<String>,
    pub source_text: String,
    pub domain_hint: String,
}

impl Prompt {
    /// SHA-256 of the rendered text, lowercase hex.
    pub fn hash(&self) -> String {
        prompt_hash(&self.rendered_text)
    }

    /// Rough token count of the rendered prompt (characters / 4).
    pub fn token_estimate(&self) -> usize {
        token_estimate(&self.rendered_text)
    }
}

pub fn prompt_hash(rendered: &str) -> String {
    hex::encode(Sha256::digest(rendered.as_bytes()))
}

pub fn token_estimate(text: &str) -> usize {
    text.chars().count() / 4
}

/// Renders the taxonomy prompt: role line, instructions, `[LABELS]` with one
/// category per line, `[TEXT]`, and the `[Answer Below]` terminator.
pub fn build_prompt(domain_hint: &str, categories: &[String], text: &str) -> Result<Prompt> {
    if categories.is_empty() {
        return Err(Error::Config("a prompt needs at least one category".into()));
    }
    let mut r = format!("You are an expert in text taxonomy for {domain_hint}.\n\n{INSTRUCTION}\n\n[LABELS]\n");
    for c in categories {
        r.push_str(c);
        r.push('\n');
    }
    r.push_str(TEXT_OPEN);
    r.push_str(text);
    r.push_str(ANSWER);
    r.push('\n');
    Ok(Prompt {
        rendered_text: r,
        categories: categories.to_vec(),
        source_text: text.to_string(),
        domain_hint: domain_hint.to_string(),
    })
}

/// The `[TEXT]` block of a rendered prompt.
pub fn text_block(rendered: &str) -> Option<&str> {
    let labels = rendered.find("[LABELS]\n")?;
    let start = labels + rendered[labels..].find(TEXT_OPEN)? + TEXT_OPEN.len();
    let end = rendered.rfind(ANSWER)?;
    (end >= start).then(|| &rendered[start..end])
}

/// Lowercase, trimmed, internal whitespace collapsed to single spaces.
pub fn normalize_category(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn clean_line(line: &str) -> String {
    let mut s = line.trim();
    for prefix in ["answer:", "label:", "category:"] {
        if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
            s = &s[prefix.len()..];
        }
    }
    let s = s.trim_start_matches(|c: char| matches!(c, '#' | '>' | '-' | '+' | '•') || c.is_whitespace());
    let strip = |c: char| matches!(c, '"' | '\'' | '`' | '*' | '_' | '“' | '”' | '‘' | '’') || c.is_whitespace();
    let mut s = s.trim_matches(strip);
    loop {
        let t = s
            .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?'))
            .trim_matches(strip);
        if t == s {
            break;
        }
        s = t;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads the category from the first non-empty response line. A listed
/// category (compared after normalization) is returned in its listed form with
/// `false`; anything else is a new category, returned with its casing and `true`.
pub fn parse_response(raw: &str, categories: &[String]) -> Result<(String, bool)> {
    let line = raw.lines().map(clean_line).find(|l| !l.is_empty()).unwrap_or_default();
    if line.is_empty() {
        return Err(Error::ResponseParse(format!("no category in response {raw:?}")));
    }
    let key = normalize_category(&line);
    match categories.iter().find(|c| normalize_category(c) == key) {
        Some(c) => Ok((c.clone(), false)),
        None => Ok((line, true)),
    }
}
