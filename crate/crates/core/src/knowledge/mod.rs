//! Dictionary knowledge for sentence pairs: each content word is reduced to
//! its lemma, the first dictionary definition of that lemma is looked up, and
//! the definitions are joined in sentence order into a knowledge text.

mod dictionary;
mod lemmatizer;

use std::collections::HashSet;

pub use dictionary::DictionaryStore;
pub use lemmatizer::{Lemmatizer, StemFix, SuffixRule};

use crate::error::Result;

/// Default cap on knowledge-text length, in whitespace-separated tokens.
pub const MAX_KNOWLEDGE_TOKENS: usize = 128;

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "the", "be", "am", "is", "are", "was", "were", "been", "of", "to", "in", "on", "at",
    "by", "for", "with", "and", "or", "but", "this", "that", "these", "those", "it", "its",
    "there", "their", "his", "her", "he", "she", "they", "them", "we", "you", "i", "as", "from",
    "into", "some", "no", "not", "do", "does", "did",
];

#[derive(Clone, Debug)]
pub struct RetrievalConfig {
    /// Tokens whose surface form or lemma is listed here are not looked up.
    pub stopwords: HashSet<String>,
    pub max_tokens: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            max_tokens: MAX_KNOWLEDGE_TOKENS,
        }
    }
}

impl RetrievalConfig {
    /// Looks up every token, function words included.
    pub fn without_stopwords() -> Self {
        RetrievalConfig {
            stopwords: HashSet::new(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeEntry {
    pub token: String,
    pub lemma: String,
    pub stopword: bool,
    /// First definition found, copied verbatim from the store.
    pub definition: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeText {
    pub entries: Vec<KnowledgeEntry>,
    /// Definitions joined by single spaces, truncated to the token cap.
    pub text: String,
}

impl KnowledgeText {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn definitions(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter_map(|e| e.definition.as_deref())
    }
}

#[derive(Clone, Debug)]
pub struct Retriever<'a> {
    store: &'a DictionaryStore,
    lemmatizer: Lemmatizer,
    config: RetrievalConfig,
}

impl<'a> Retriever<'a> {
    pub fn new(store: &'a DictionaryStore) -> Self {
        Self::with_config(store, RetrievalConfig::default())
    }

    pub fn with_config(store: &'a DictionaryStore, config: RetrievalConfig) -> Self {
        Retriever {
            store,
            lemmatizer: Lemmatizer::english(),
            config,
        }
    }

    pub fn lemmatizer(&self) -> &Lemmatizer {
        &self.lemmatizer
    }

    /// Builds the knowledge text for one sentence. Every occurrence of a word
    /// is looked up, so repeated words repeat their definition. Tokens with
    /// no entry are skipped.
    pub fn retrieve<S: AsRef<str>>(&self, tokens: &[S]) -> Result<KnowledgeText> {
        let mut entries = Vec::with_capacity(tokens.len());
        let mut words: Vec<&str> = Vec::new();
        for token in tokens {
            let token = token.as_ref();
            let lemma = self.lemmatizer.lemmatize(token)?;
            let lower = token.to_lowercase();
            let stopword =
                self.config.stopwords.contains(&lower) || self.config.stopwords.contains(&lemma);
            let definition = if stopword {
                None
            } else {
                self.store
                    .first_definition(&lemma)
                    .or_else(|| self.store.first_definition(&lower))
                    .map(str::to_owned)
            };
            entries.push(KnowledgeEntry {
                token: token.to_owned(),
                lemma,
                stopword,
                definition,
            });
        }
        for def in entries.iter().filter_map(|e| e.definition.as_deref()) {
            words.extend(def.split_whitespace());
        }
        words.truncate(self.config.max_tokens);
        let text = words.join(" ");
        Ok(KnowledgeText { entries, text })
    }

    /// Knowledge texts for both sides of a pair, retrieved independently.
    pub fn build_pair_knowledge<S: AsRef<str>>(
        &self,
        a: &[S],
        b: &[S],
    ) -> Result<(KnowledgeText, KnowledgeText)> {
        Ok((self.retrieve(a)?, self.retrieve(b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn store() -> DictionaryStore {
        let mut s = DictionaryStore::new();
        s.insert("man", ["An adult male human.".to_string()]);
        s.insert("hold", ["To grasp or grip.".to_string()]);
        s.insert(
            "saxophone",
            [
                "A single-reed instrument.".to_string(),
                "Second sense.".into(),
            ],
        );
        s.insert(
            "instrument",
            ["A device used to produce music.".to_string()],
        );
        s
    }

    #[test]
    fn first_definition_only_in_token_order() {
        let s = store();
        let r = Retriever::new(&s);
        let k = r
            .retrieve(&tokenize("The man is holding a saxophone"))
            .unwrap();
        assert_eq!(
            k.text,
            "An adult male human. To grasp or grip. A single-reed instrument."
        );
        assert!(k.entries[0].stopword);
        assert_eq!(k.entries[3].lemma, "hold");
    }

    #[test]
    fn unknown_tokens_give_empty_text() {
        let s = store();
        let k = Retriever::new(&s).retrieve(&["zzz", "qqq"]).unwrap();
        assert!(k.is_empty());
        assert_eq!(k.entries.len(), 2);
    }

    #[test]
    fn without_stopwords_every_found_token_contributes() {
        let mut s = store();
        s.insert("a", ["The indefinite article.".to_string()]);
        let r = Retriever::with_config(&s, RetrievalConfig::without_stopwords());
        let tokens = ["a", "man", "holding", "a", "saxophone"];
        let k = r.retrieve(&tokens).unwrap();
        assert_eq!(k.definitions().count(), tokens.len());
    }

    #[test]
    fn truncates_to_token_cap() {
        let mut s = DictionaryStore::new();
        s.insert("long", [vec!["w"; 100].join(" ")]);
        let r = Retriever::new(&s);
        let k = r.retrieve(&["long", "long"]).unwrap();
        assert_eq!(k.text.split_whitespace().count(), MAX_KNOWLEDGE_TOKENS);
    }

    #[test]
    fn pair_retrieval_is_symmetric() {
        let s = store();
        let r = Retriever::new(&s);
        let a = tokenize("a man holds a saxophone");
        let b = tokenize("a man holds an instrument");
        let (ka, kb) = r.build_pair_knowledge(&a, &b).unwrap();
        let (kb2, ka2) = r.build_pair_knowledge(&b, &a).unwrap();
        assert_eq!(ka, ka2);
        assert_eq!(kb, kb2);
        let (x, y) = r.build_pair_knowledge(&a, &a).unwrap();
        assert_eq!(x, y);
    }
}
