//! Rule-based English lemmatizer: irregular-form exceptions, then ordered
//! suffix rules, applied until the word stops changing.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// What to do with the stem after a suffix is removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StemFix {
    None,
    /// Verb-inflection cleanup after `-ing` / `-ed`: undouble a final
    /// consonant (`runn` → `run`) or restore a silent `e` (`rid` → `ride`).
    Verb,
}

#[derive(Clone, Debug)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    /// Minimum length of the word left after removing the suffix.
    pub min_stem: usize,
    /// The remaining stem must contain a vowel.
    pub stem_needs_vowel: bool,
    /// The rule does not fire for words ending in any of these.
    pub unless: Vec<String>,
    pub fix: StemFix,
}

impl SuffixRule {
    fn new(suffix: &str, replacement: &str, min_stem: usize) -> Self {
        SuffixRule {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_stem,
            stem_needs_vowel: false,
            unless: Vec::new(),
            fix: StemFix::None,
        }
    }

    fn vowel(mut self) -> Self {
        self.stem_needs_vowel = true;
        self
    }

    fn unless(mut self, endings: &[&str]) -> Self {
        self.unless = endings.iter().map(|s| s.to_string()).collect();
        self
    }

    fn verb(mut self) -> Self {
        self.fix = StemFix::Verb;
        self
    }

    fn apply(&self, word: &str) -> Option<String> {
        let stem = word.strip_suffix(self.suffix.as_str())?;
        if stem.chars().count() < self.min_stem {
            return None;
        }
        if self.unless.iter().any(|u| word.ends_with(u.as_str())) {
            return None;
        }
        if self.stem_needs_vowel && !has_vowel(stem) {
            return None;
        }
        let mut out = format!("{stem}{}", self.replacement);
        if self.fix == StemFix::Verb {
            out = fix_verb_stem(out);
        }
        Some(out)
    }
}

#[derive(Clone, Debug)]
pub struct Lemmatizer {
    exceptions: HashMap<String, String>,
    rules: Vec<SuffixRule>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Self::english()
    }
}

impl Lemmatizer {
    pub fn new(exceptions: HashMap<String, String>, rules: Vec<SuffixRule>) -> Self {
        Lemmatizer { exceptions, rules }
    }

    /// The shipped English table.
    pub fn english() -> Self {
        let exceptions = IRREGULAR
            .iter()
            .map(|&(form, lemma)| (form.to_string(), lemma.to_string()))
            .collect();
        let rules = vec![
            SuffixRule::new("’s", "", 1),
            SuffixRule::new("'s", "", 1),
            SuffixRule::new("sses", "ss", 1),
            SuffixRule::new("ies", "y", 2),
            SuffixRule::new("ches", "ch", 1),
            SuffixRule::new("shes", "sh", 1),
            SuffixRule::new("xes", "x", 1),
            SuffixRule::new("zzes", "zz", 1),
            SuffixRule::new("ied", "y", 2),
            SuffixRule::new("ing", "", 2).vowel().verb(),
            SuffixRule::new("ed", "", 2).vowel().unless(&["eed"]).verb(),
            SuffixRule::new("s", "", 3).unless(&["ss", "us", "is", "’s", "'s"]),
        ];
        Lemmatizer { exceptions, rules }
    }

    pub fn rules(&self) -> &[SuffixRule] {
        &self.rules
    }

    pub fn exceptions(&self) -> &HashMap<String, String> {
        &self.exceptions
    }

    /// Lowercases `token` and reduces it to its lemma.
    ///
    /// An exception entry ends the reduction; otherwise the first matching
    /// suffix rule fires and the result is reduced again. The output is a
    /// fixed point, so lemmatizing twice is the same as once.
    pub fn lemmatize(&self, token: &str) -> Result<String> {
        if token.is_empty() {
            return Err(Error::Argument("cannot lemmatize an empty token".into()));
        }
        let mut word = token.to_lowercase();
        // Every rule shortens the word, so this terminates.
        loop {
            if let Some(lemma) = self.exceptions.get(&word) {
                return Ok(lemma.clone());
            }
            match self.rules.iter().find_map(|r| r.apply(&word)) {
                Some(next) if next.chars().count() < word.chars().count() => word = next,
                _ => return Ok(word),
            }
        }
    }
}

fn is_vowel_at(chars: &[char], i: usize) -> bool {
    match chars[i] {
        'a' | 'e' | 'i' | 'o' | 'u' => true,
        'y' => i > 0 && !is_vowel_at(chars, i - 1),
        _ => false,
    }
}

fn has_vowel(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    (0..chars.len()).any(|i| is_vowel_at(&chars, i))
}

/// Number of vowel-consonant sequences, `m` in `[C](VC)^m[V]`.
fn measure(chars: &[char]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..chars.len() {
        let v = is_vowel_at(chars, i);
        if prev_vowel && !v {
            m += 1;
        }
        prev_vowel = v;
    }
    m
}

/// Ends consonant-vowel-consonant with the last consonant not w, x or y.
fn ends_cvc(chars: &[char]) -> bool {
    let n = chars.len();
    n >= 3
        && !is_vowel_at(chars, n - 3)
        && is_vowel_at(chars, n - 2)
        && !is_vowel_at(chars, n - 1)
        && !matches!(chars[n - 1], 'w' | 'x' | 'y')
}

fn fix_verb_stem(stem: String) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 4
        && chars[n - 1] == chars[n - 2]
        && !is_vowel_at(&chars, n - 1)
        && !matches!(chars[n - 1], 'l' | 's' | 'z')
    {
        return chars[..n - 1].iter().collect();
    }
    let last = chars[n - 1];
    let before = if n >= 2 { Some(chars[n - 2]) } else { None };
    let soft_ending = last == 'v'
        || (matches!(last, 'c' | 'g')
            && matches!(before, Some('n' | 'r' | 'd'))
            && !(last == 'g' && before == Some('n')));
    if soft_ending || (measure(&chars) == 1 && ends_cvc(&chars)) {
        return format!("{stem}e");
    }
    stem
}

/// Irregular inflections and words the suffix rules would mangle.
const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"),
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("doing", "do"),
    ("goes", "go"),
    ("went", "go"),
    ("gone", "go"),
    ("going", "go"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("ran", "run"),
    ("sang", "sing"),
    ("sung", "sing"),
    ("sat", "sit"),
    ("saw", "see"),
    ("seen", "see"),
    ("rode", "ride"),
    ("ridden", "ride"),
    ("swam", "swim"),
    ("swum", "swim"),
    ("drank", "drink"),
    ("drunk", "drink"),
    ("wrote", "write"),
    ("written", "write"),
    ("took", "take"),
    ("taken", "take"),
    ("gave", "give"),
    ("given", "give"),
    ("made", "make"),
    ("held", "hold"),
    ("stood", "stand"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("caught", "catch"),
    ("brought", "bring"),
    ("bought", "buy"),
    ("thought", "think"),
    ("taught", "teach"),
    ("fought", "fight"),
    ("found", "find"),
    ("told", "tell"),
    ("said", "say"),
    ("paid", "pay"),
    ("laid", "lay"),
    ("lying", "lie"),
    ("dying", "die"),
    ("tying", "tie"),
    ("fed", "feed"),
    ("led", "lead"),
    ("fell", "fall"),
    ("fallen", "fall"),
    ("felt", "feel"),
    ("left", "leave"),
    ("kept", "keep"),
    ("slept", "sleep"),
    ("met", "meet"),
    ("won", "win"),
    ("began", "begin"),
    ("begun", "begin"),
    ("came", "come"),
    ("became", "become"),
    ("drove", "drive"),
    ("driven", "drive"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("grew", "grow"),
    ("grown", "grow"),
    ("knew", "know"),
    ("known", "know"),
    ("blew", "blow"),
    ("wore", "wear"),
    ("worn", "wear"),
    ("broke", "break"),
    ("broken", "break"),
    ("spoke", "speak"),
    ("spoken", "speak"),
    ("chose", "choose"),
    ("chosen", "choose"),
    ("froze", "freeze"),
    ("frozen", "freeze"),
    ("woke", "wake"),
    ("hid", "hide"),
    ("hidden", "hide"),
    ("bit", "bite"),
    ("bitten", "bite"),
    ("built", "build"),
    ("sent", "send"),
    ("spent", "spend"),
    ("lost", "lose"),
    ("heard", "hear"),
    ("sold", "sell"),
    ("dug", "dig"),
    ("hung", "hang"),
    ("shot", "shoot"),
    ("struck", "strike"),
    ("stuck", "stick"),
    ("swung", "swing"),
    ("used", "use"),
    ("using", "use"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("geese", "goose"),
    ("mice", "mouse"),
    ("oxen", "ox"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("halves", "half"),
    ("shelves", "shelf"),
    ("potatoes", "potato"),
    ("tomatoes", "tomato"),
    ("heroes", "hero"),
    ("better", "good"),
    ("best", "good"),
    ("worse", "bad"),
    ("worst", "bad"),
    ("news", "news"),
    ("species", "species"),
    ("series", "series"),
    ("clothes", "clothes"),
    ("nothing", "nothing"),
    ("something", "something"),
    ("anything", "anything"),
    ("everything", "everything"),
    ("morning", "morning"),
    ("evening", "evening"),
    ("building", "building"),
    ("ceiling", "ceiling"),
    ("clothing", "clothing"),
    ("wedding", "wedding"),
    ("pudding", "pudding"),
    ("hundred", "hundred"),
    ("sled", "sled"),
];
