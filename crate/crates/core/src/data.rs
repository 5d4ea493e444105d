//! Sentence-pair datasets, label maps and attention export.
//!
//! A dataset is a UTF-8 TSV file, one `label<TAB>premise<TAB>hypothesis` per
//! line. Labels are resolved through a sidecar map with one `label<TAB>index`
//! per line, indices contiguous from 0.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::knowledge::Retriever;
use crate::model::PairInput;
use crate::tensor::{Real, Tensor};
use crate::text::tokenize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelMap {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || index.insert(l.clone(), i).is_some() {
                return Err(Error::Argument(format!("empty or duplicate label {l:?}")));
            }
        }
        Ok(LabelMap { labels, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: impl Into<PathBuf>) -> Result<Self> {
        let origin = origin.into();
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.clone(),
            line,
            msg,
        };
        let mut slots: Vec<Option<String>> = Vec::new();
        let mut last_line = 0;
        for (i, line) in text.lines().enumerate() {
            last_line = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(err(
                    i + 1,
                    format!("expected 2 tab-separated columns, found {}", cols.len()),
                ));
            }
            let idx: usize = cols[1]
                .trim()
                .parse()
                .map_err(|_| err(i + 1, format!("bad label index {:?}", cols[1])))?;
            if slots.len() <= idx {
                slots.resize(idx + 1, None);
            }
            if slots[idx].is_some() {
                return Err(err(i + 1, format!("label index {idx} assigned twice")));
            }
            slots[idx] = Some(cols[0].trim().to_string());
        }
        let labels = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| err(last_line, format!("label index {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels).map_err(|e| err(last_line, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn to_sidecar(&self) -> String {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{l}\t{i}\n"))
            .collect()
    }
}

impl TryFrom<Vec<String>> for LabelMap {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<LabelMap> for Vec<String> {
    fn from(m: LabelMap) -> Self {
        m.labels
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExamplePair {
    pub id: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: usize,
    /// Knowledge-text tokens; empty until [`ExamplePair::attach_knowledge`].
    pub knowledge_a: Vec<String>,
    pub knowledge_b: Vec<String>,
}

impl ExamplePair {
    pub fn new(
        id: impl Into<String>,
        premise: &str,
        hypothesis: &str,
        label: usize,
    ) -> Result<Self> {
        let id = id.into();
        let premise = tokenize(premise);
        let hypothesis = tokenize(hypothesis);
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::Argument(format!("pair {id} has an empty sentence")));
        }
        Ok(ExamplePair {
            id,
            premise,
            hypothesis,
            label,
            knowledge_a: Vec::new(),
            knowledge_b: Vec::new(),
        })
    }

    pub fn attach_knowledge(&mut self, retriever: &Retriever<'_>) -> Result<()> {
        let (ka, kb) = retriever.build_pair_knowledge(&self.premise, &self.hypothesis)?;
        self.knowledge_a = tokenize(&ka.text);
        self.knowledge_b = tokenize(&kb.text);
        Ok(())
    }

    pub fn encode(&self, vocab: &Vocabulary, max_len: usize) -> PairInput {
        PairInput::encode(
            vocab,
            &self.premise,
            &self.hypothesis,
            &self.knowledge_a,
            &self.knowledge_b,
            max_len,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<ExamplePair>,
}

impl DatasetSplit {
    /// Rejects duplicate ids.
    pub fn new(name: SplitName, examples: Vec<ExamplePair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate example id {:?} in {name}",
                    ex.id
                )));
            }
        }
        Ok(DatasetSplit { name, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn attach_knowledge(&mut self, retriever: &Retriever<'_>) -> Result<()> {
        self.examples
            .iter_mut()
            .try_for_each(|ex| ex.attach_knowledge(retriever))
    }

    /// Every sentence and knowledge text, for vocabulary building.
    pub fn corpus(&self) -> impl Iterator<Item = &[String]> {
        self.examples.iter().flat_map(|e| {
            [
                e.premise.as_slice(),
                e.hypothesis.as_slice(),
                e.knowledge_a.as_slice(),
                e.knowledge_b.as_slice(),
            ]
        })
    }

    pub fn encode(&self, vocab: &Vocabulary, max_len: usize) -> Vec<(PairInput, usize)> {
        self.examples
            .iter()
            .map(|e| (e.encode(vocab, max_len), e.label))
            .collect()
    }
}

pub fn load_pairs(
    path: impl AsRef<Path>,
    labels: &LabelMap,
    name: SplitName,
) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path, labels, name)
}

/// Parses TSV text. Example ids are `<split>-<line>`. Blank lines are skipped.
pub fn parse_pairs(
    text: &str,
    origin: impl Into<PathBuf>,
    labels: &LabelMap,
    name: SplitName,
) -> Result<DatasetSplit> {
    let origin = origin.into();
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let label = labels
            .index(cols[0].trim())
            .ok_or_else(|| err(format!("unknown label {:?}", cols[0])))?;
        let ex = ExamplePair::new(format!("{name}-{}", i + 1), cols[1], cols[2], label)
            .map_err(|e| err(e.to_string()))?;
        examples.push(ex);
    }
    DatasetSplit::new(name, examples)
}

/// Renders attention weights as CSV: the header row is an empty corner cell
/// followed by the hypothesis tokens, each further row a premise token
/// followed by its weights with six decimals.
pub fn attention_csv<T: Real, S: AsRef<str>>(
    weights: &Tensor<T>,
    premise: &[S],
    hypothesis: &[S],
) -> Result<String> {
    let (m, n) = weights.dims2()?;
    if m != premise.len() || n != hypothesis.len() {
        return Err(Error::dim(
            "export_attention",
            weights.shape(),
            &[premise.len(), hypothesis.len()],
        ));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Argument(format!("csv encoding failed: {e}"));
    let mut header = vec![String::new()];
    header.extend(hypothesis.iter().map(|s| s.as_ref().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, tok) in premise.iter().enumerate() {
        let mut rec = vec![tok.as_ref().to_string()];
        rec.extend(weights.row(i).iter().map(|v| format!("{:.6}", v.as_f64())));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Argument(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output of utf-8 input is utf-8"))
}

pub fn export_attention<T: Real, S: AsRef<str>>(
    weights: &Tensor<T>,
    premise: &[S],
    hypothesis: &[S],
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = attention_csv(weights, premise, hypothesis)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nli() -> LabelMap {
        LabelMap::parse(
            "entailment\t0\nneutral\t1\ncontradiction\t2\n",
            "labels.tsv",
        )
        .unwrap()
    }

    #[test]
    fn loads_in_file_order() {
        let text = "entailment\tA man sings.\tA person sings.\n\
                    neutral\tA dog runs.\tA dog runs fast.\n\
                    contradiction\tA cat sleeps.\tA cat runs.\n";
        let split = parse_pairs(text, "d.tsv", &nli(), SplitName::Train).unwrap();
        assert_eq!(split.len(), 3);
        assert_eq!(
            split.examples.iter().map(|e| e.label).collect::<Vec<_>>(),
            [0, 1, 2]
        );
        assert_eq!(split.examples[0].premise, ["a", "man", "sings"]);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let text = "entailment\ta\tb\nneutral\tonly two\n";
        match parse_pairs(text, "d.tsv", &nli(), SplitName::Test) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_pairs("maybe\ta\tb\n", "d.tsv", &nli(), SplitName::Test) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("maybe"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_pairs("neutral\t...\tb\n", "d.tsv", &nli(), SplitName::Test).is_err());
    }

    #[test]
    fn label_map_validation() {
        assert_eq!(nli().label(2), Some("contradiction"));
        assert!(LabelMap::parse("a\t0\nb\t2\n", "l").is_err());
        assert!(LabelMap::parse("a\t0\nb\t0\n", "l").is_err());
        assert!(LabelMap::parse("a\t0\n", "l").is_err());
        let m = nli();
        assert_eq!(LabelMap::parse(&m.to_sidecar(), "l").unwrap(), m);
    }

    #[test]
    fn minimal_attention_csv() {
        let a = Tensor::<f64>::matrix(1, 1, vec![1.0]).unwrap();
        let csv = attention_csv(&a, &["x"], &["y"]).unwrap();
        assert_eq!(csv, ",y\nx,1.000000\n");
    }

    #[test]
    fn attention_csv_quotes_and_checks_extents() {
        let a = Tensor::<f64>::matrix(1, 2, vec![0.25, 0.75]).unwrap();
        let csv = attention_csv(&a, &["a,b"], &["c", "d\"e"]).unwrap();
        assert_eq!(csv, ",c,\"d\"\"e\"\n\"a,b\",0.250000,0.750000\n");
        assert!(matches!(
            attention_csv(&a, &["a"], &["c"]),
            Err(Error::Dimension { .. })
        ));
    }
}
