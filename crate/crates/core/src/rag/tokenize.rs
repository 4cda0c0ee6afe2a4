//! Whitespace tokenizer with punctuation splitting.
//!
//! Text is split on Unicode whitespace; each leading and trailing punctuation
//! character of a word becomes its own token. Punctuation inside a word
//! ("3.5", "don't") is kept. Joining tokens with single spaces and
//! re-tokenizing yields the same tokens.

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00AB}' | '\u{00BB}'
        )
}

/// Byte ranges of each token in `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut offset = 0;
    for word in text.split_whitespace() {
        let start = offset + text[offset..].find(word).expect("word comes from text");
        offset = start + word.len();
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let lead = chars.iter().take_while(|(_, c)| is_punct(*c)).count();
        if lead == chars.len() {
            spans.extend(chars.iter().map(|&(i, c)| (start + i, start + i + c.len_utf8())));
            continue;
        }
        let trail = chars.iter().rev().take_while(|(_, c)| is_punct(*c)).count();
        for &(i, c) in &chars[..lead] {
            spans.push((start + i, start + i + c.len_utf8()));
        }
        let core_start = chars[lead].0;
        let core_end = chars
            .get(chars.len() - trail)
            .map_or(word.len(), |&(i, _)| i);
        spans.push((start + core_start, start + core_end));
        for &(i, c) in &chars[chars.len() - trail..] {
            spans.push((start + i, start + i + c.len_utf8()));
        }
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(a, b)| text[a..b].to_string())
        .collect()
}

/// Canonical inverse of [`tokenize`]: tokens joined by single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}
