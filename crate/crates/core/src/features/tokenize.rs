use unicode_general_category::{get_general_category, GeneralCategory as Gc};

/// Whether `c` belongs inside a term. Letters, combining marks (Indic vowel
/// signs, viramas), digits and format characters such as ZWJ/ZWNJ do;
/// whitespace, punctuation, symbols and controls separate terms.
pub fn is_term_char(c: char) -> bool {
    if c.is_whitespace() {
        return false;
    }
    !matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
            | Gc::MathSymbol
            | Gc::CurrencySymbol
            | Gc::ModifierSymbol
            | Gc::OtherSymbol
            | Gc::Control
            | Gc::SpaceSeparator
            | Gc::LineSeparator
            | Gc::ParagraphSeparator
    )
}

/// Lowercased unigram terms split on whitespace and punctuation.
pub fn tokenize_basic(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_term_char(c) {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

/// Unigrams followed by space-joined n-grams up to `max_n`.
pub fn terms_with_ngrams(text: &str, max_n: usize) -> Vec<String> {
    let unigrams = tokenize_basic(text);
    let mut out = unigrams.clone();
    for n in 2..=max_n {
        out.extend(unigrams.windows(n).map(|w| w.join(" ")));
    }
    out
}
