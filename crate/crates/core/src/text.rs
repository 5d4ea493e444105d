/// Splits text into lowercase word tokens.
///
/// A token is a maximal run of alphanumeric characters, optionally joined by
/// single inner apostrophes or hyphens (`one’s`, `single-reed`). Everything
/// else, including punctuation, separates tokens and is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if is_joiner(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '’' | '-')
}
