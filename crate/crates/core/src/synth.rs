//! Constructed datasets with known answers.
//!
//! [`separable`] is 32 pairs whose label is fixed by a marker word in the
//! hypothesis, so a bag-of-words model separates them. [`knowledge_keyed`] is
//! 200 pairs whose label is decidable only through dictionary definitions:
//! the premise names an object, the hypothesis a category, and the test split
//! uses objects that never occur in training text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, ExamplePair, LabelMap, SplitName};
use crate::error::Result;
use crate::knowledge::{DictionaryStore, Retriever};

pub struct Fixture {
    pub labels: LabelMap,
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub dictionary: DictionaryStore,
}

impl Fixture {
    /// Sentences and knowledge texts of the training split only.
    pub fn train_corpus(&self) -> impl Iterator<Item = &[String]> {
        self.train.corpus()
    }
}

const SUBJECTS: &[&str] = &["man", "woman", "boy", "girl", "child", "dog"];
const VERBS: &[&str] = &["runs", "sings", "sleeps", "eats", "reads", "swims", "waits"];
const PLACES: &[&str] = &["park", "beach", "kitchen", "street", "garden", "field"];

/// 32 pairs, three classes. Entailed hypotheses repeat the premise; neutral
/// ones add "perhaps", contradicting ones add "never".
pub fn separable() -> Result<Fixture> {
    let labels = nli_labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e9a);
    let mut examples = Vec::with_capacity(32);
    for i in 0..32 {
        let s = SUBJECTS.choose(&mut rng).unwrap();
        let v = VERBS.choose(&mut rng).unwrap();
        let p = PLACES.choose(&mut rng).unwrap();
        let premise = format!("a {s} {v} in the {p}");
        let label = i % 3;
        let hypothesis = match label {
            0 => premise.clone(),
            1 => format!("a {s} perhaps {v} in the {p}"),
            _ => format!("a {s} never {v} in the {p}"),
        };
        examples.push(ExamplePair::new(
            format!("sep-{i}"),
            &premise,
            &hypothesis,
            label,
        )?);
    }
    let train = DatasetSplit::new(SplitName::Train, examples)?;
    let test = DatasetSplit::new(SplitName::Test, Vec::new())?;
    Ok(Fixture {
        labels,
        train,
        test,
        dictionary: DictionaryStore::new(),
    })
}

pub fn nli_labels() -> Result<LabelMap> {
    LabelMap::new(vec![
        "entailment".into(),
        "neutral".into(),
        "contradiction".into(),
    ])
}

struct Category {
    name: &'static str,
    keywords: [&'static str; 2],
}

const CATEGORIES: &[Category] = &[
    Category {
        name: "instrument",
        keywords: ["musical", "device"],
    },
    Category {
        name: "vehicle",
        keywords: ["wheeled", "conveyance"],
    },
    Category {
        name: "fruit",
        keywords: ["sweet", "produce"],
    },
    Category {
        name: "tool",
        keywords: ["handheld", "implement"],
    },
    Category {
        name: "animal",
        keywords: ["living", "creature"],
    },
];

const HOLDERS: &[(&str, &str)] = &[
    ("man", "An adult male person."),
    ("woman", "An adult female person."),
    ("boy", "A young male person."),
    ("girl", "A young female person."),
];

const FILLERS: &[&str] = &[
    "small", "large", "round", "long", "bright", "dark", "old", "new", "metal", "wooden", "heavy",
    "red", "blue", "green", "smooth", "rough",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

pub const KNOWLEDGE_TRAIN_MEMBERS: usize = 15;
pub const KNOWLEDGE_TEST_MEMBERS: usize = 5;

/// 200 pairs, two classes (entailment, contradiction), 150 train and 50 test.
///
/// Every object word is invented and defined in the fixture dictionary with
/// its category's keyword pair; every category word is defined with the
/// same pair. Each object yields one pair against its own category and one
/// against a random other category. Test objects are disjoint from training
/// objects, so in text they are out of vocabulary and only their definitions
/// reveal the category. Knowledge texts are attached to both splits.
pub fn knowledge_keyed() -> Result<Fixture> {
    let labels = LabelMap::new(vec!["entailment".into(), "contradiction".into()])?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6e);
    let mut dictionary = DictionaryStore::new();
    dictionary.insert("hold", ["To grasp or carry in the hands.".to_string()]);
    for (word, def) in HOLDERS {
        dictionary.insert(word, [def.to_string()]);
    }
    for c in CATEGORIES {
        let [k1, k2] = c.keywords;
        dictionary.insert(c.name, [format!("Any {k1} {k2} of some kind.")]);
    }

    let per_category = KNOWLEDGE_TRAIN_MEMBERS + KNOWLEDGE_TEST_MEMBERS;
    let names = invented_words(CATEGORIES.len() * per_category, &mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, c) in CATEGORIES.iter().enumerate() {
        for j in 0..per_category {
            let member = &names[ci * per_category + j];
            let [k1, k2] = c.keywords;
            let f: Vec<&str> = FILLERS.choose_multiple(&mut rng, 3).copied().collect();
            dictionary.insert(
                member,
                [format!(
                    "A {} {k1} {k2} with a {} {} part.",
                    f[0], f[1], f[2]
                )],
            );
            let other = loop {
                let o = rng.gen_range(0..CATEGORIES.len());
                if o != ci {
                    break o;
                }
            };
            let split = if j < KNOWLEDGE_TRAIN_MEMBERS {
                &mut train
            } else {
                &mut test
            };
            for (target, label) in [(ci, 0), (other, 1)] {
                let (holder, _) = HOLDERS[rng.gen_range(0..HOLDERS.len())];
                let category = CATEGORIES[target].name;
                let article = if category.starts_with(['a', 'e', 'i', 'o', 'u']) {
                    "an"
                } else {
                    "a"
                };
                let premise = format!("a {holder} is holding a {member}");
                let hypothesis = format!("a {holder} is holding {article} {category}");
                let id = format!("kk-{member}-{label}");
                split.push(ExamplePair::new(id, &premise, &hypothesis, label)?);
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let mut train = DatasetSplit::new(SplitName::Train, train)?;
    let mut test = DatasetSplit::new(SplitName::Test, test)?;
    let retriever = Retriever::new(&dictionary);
    train.attach_knowledge(&retriever)?;
    test.attach_knowledge(&retriever)?;
    Ok(Fixture {
        labels,
        train,
        test,
        dictionary,
    })
}

/// Distinct three-syllable pseudo-words.
fn invented_words(n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS.choose(rng).unwrap(),
                    NUCLEI.choose(rng).unwrap()
                )
            })
            .collect();
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn separable_shape() {
        let f = separable().unwrap();
        assert_eq!(f.train.len(), 32);
        assert_eq!(f.labels.len(), 3);
        for ex in &f.train.examples {
            let has = |w: &str| ex.hypothesis.iter().any(|t| t == w);
            let key = if has("perhaps") {
                1
            } else if has("never") {
                2
            } else {
                0
            };
            assert_eq!(key, ex.label);
        }
    }

    #[test]
    fn knowledge_keyed_shape_and_holdout() {
        let f = knowledge_keyed().unwrap();
        assert_eq!(f.train.len(), 150);
        assert_eq!(f.test.len(), 50);
        let train_words: HashSet<&String> = f
            .train
            .examples
            .iter()
            .flat_map(|e| e.premise.iter().chain(&e.hypothesis))
            .collect();
        for ex in &f.test.examples {
            let object = ex.premise.last().unwrap();
            assert!(!train_words.contains(object));
            assert!(!ex.knowledge_a.is_empty());
        }
        let positives = f.test.examples.iter().filter(|e| e.label == 0).count();
        assert_eq!(positives, 25);
    }

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(
            knowledge_keyed().unwrap().train,
            knowledge_keyed().unwrap().train
        );
        assert_eq!(separable().unwrap().train, separable().unwrap().train);
    }
}
