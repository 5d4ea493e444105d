//! The full model: embed both sentences and both knowledge texts, match each
//! pair with one shared matcher, fuse, classify.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::fusion::{Classifier, FusionParams, GateOverride, Head};
use crate::matching::{MatchConfig, Matcher, Seq};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Default cap on sentence and knowledge-text length.
pub const MAX_LEN: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub matching: MatchConfig,
    pub classes: usize,
    pub head: Head,
    /// Without knowledge the fusion layer is not built and `Z = H`.
    pub knowledge: bool,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, classes: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 200,
            matching: MatchConfig::default(),
            classes,
            head: Head::Bounded,
            knowledge: true,
            max_len: MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.matching.validate()?;
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "vocabulary must hold at least <pad> and <unk>".into(),
            ));
        }
        if self.embed_dim == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "embedding size and max length must be positive".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Token ids for one pair and its two knowledge texts. Every list is
/// nonempty; [`Vocabulary::encode`] substitutes `<unk>` for empty input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairInput {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub ka: Vec<usize>,
    pub kb: Vec<usize>,
}

impl PairInput {
    pub fn encode<S: AsRef<str>>(
        vocab: &Vocabulary,
        a: &[S],
        b: &[S],
        ka: &[S],
        kb: &[S],
        max_len: usize,
    ) -> Self {
        PairInput {
            a: vocab.encode(a, max_len),
            b: vocab.encode(b, max_len),
            ka: vocab.encode(ka, max_len),
            kb: vocab.encode(kb, max_len),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Run the knowledge pass and fuse. Requires a model built with knowledge.
    pub knowledge: bool,
    pub gate: GateOverride,
}

impl ForwardOptions {
    pub fn text_only() -> Self {
        ForwardOptions {
            knowledge: false,
            gate: GateOverride::Computed,
        }
    }
}

pub struct ForwardOutput {
    /// `[1 × K]`.
    pub probs: Var,
    pub h: Var,
    pub kh: Option<Var>,
    pub z: Var,
    pub gate: Option<Var>,
    /// Final-block co-attention weights of the sentence pass.
    pub attention: Var,
    pub knowledge_attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Ketm {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub matcher: Matcher,
    pub fusion: Option<FusionParams>,
    pub classifier: Classifier,
}

impl Ketm {
    /// Registers every parameter in `store`. Parameter order, and therefore
    /// initialization, depends only on `config` and `rng`.
    pub fn new<T: Real>(
        config: ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let embedding =
            EmbeddingTable::new(store, "embedding", config.vocab_size, config.embed_dim, rng)?;
        let matcher = Matcher::new(
            config.matching.clone(),
            config.embed_dim,
            store,
            "match",
            rng,
        )?;
        let width = config.matching.output_dim();
        let fusion = if config.knowledge {
            Some(FusionParams::new(store, "fusion", width, rng)?)
        } else {
            None
        };
        let classifier = Classifier::new(store, "output", width, config.classes, config.head, rng)?;
        Ok(Ketm {
            config,
            embedding,
            matcher,
            fusion,
            classifier,
        })
    }

    pub fn default_options(&self) -> ForwardOptions {
        ForwardOptions {
            knowledge: self.fusion.is_some(),
            gate: GateOverride::Computed,
        }
    }

    fn embed<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ids: &[usize],
        dropout: &mut Option<&mut dyn RngCore>,
    ) -> Result<Seq> {
        let x = self.embedding.embed(tape, store, ids)?;
        let x = match dropout {
            Some(rng) => tape.dropout(x, self.config.matching.dropout, rng),
            None => x,
        };
        Ok(Seq::full(tape, x))
    }

    /// One pair through the network. Dropout is applied to the embeddings and
    /// to `Z` when `dropout` is given.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &PairInput,
        opts: ForwardOptions,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput> {
        let x = self.embed(tape, store, &input.a, &mut dropout)?;
        let y = self.embed(tape, store, &input.b, &mut dropout)?;
        let text = self.matcher.forward(tape, store, x, y)?;
        let h = text.h;
        let width = self.config.matching.output_dim();

        let (z, kh, gate, knowledge_attention) = if opts.knowledge {
            let fusion = self.fusion.as_ref().ok_or_else(|| {
                Error::Config("model was built without the knowledge path".into())
            })?;
            let kx = self.embed(tape, store, &input.ka, &mut dropout)?;
            let ky = self.embed(tape, store, &input.kb, &mut dropout)?;
            let know = self.matcher.forward(tape, store, kx, ky)?;
            let fused = fusion.fuse(tape, store, h, know.h, opts.gate)?;
            (
                fused.z,
                Some(know.h),
                Some(fused.gate),
                Some(know.attention),
            )
        } else {
            (tape.reshape(h, vec![1, width])?, None, None, None)
        };
        let z_in = match dropout {
            Some(mut rng) => tape.dropout(z, self.config.matching.dropout, &mut rng),
            None => z,
        };
        let probs = self.classifier.classify(tape, store, z_in)?;
        Ok(ForwardOutput {
            probs,
            h,
            kh,
            z,
            gate,
            attention: text.attention,
            knowledge_attention,
        })
    }

    /// Mean cross-entropy over `batch`, recorded on one tape.
    pub fn batch_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &[(&PairInput, usize)],
        opts: ForwardOptions,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let mut probs = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (input, label) in batch {
            let rng = dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
            probs.push(self.forward(tape, store, input, opts, rng)?.probs);
            labels.push(*label);
        }
        let probs = tape.concat_rows(&probs)?;
        tape.cross_entropy(probs, &labels)
    }

    /// Evaluation-mode class probabilities.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, input: &PairInput) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, input, self.default_options(), None)?;
        Ok(tape.value(out.probs).data().to_vec())
    }
}

/// Index of the largest entry, first on ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(knowledge: bool) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 6,
            matching: MatchConfig {
                hidden: 8,
                heads: 2,
                conv_width: 3,
                blocks: 2,
                dropout: 0.2,
            },
            classes: 3,
            head: Head::Bounded,
            knowledge,
            max_len: MAX_LEN,
        }
    }

    fn input() -> PairInput {
        PairInput {
            a: vec![2, 3, 4],
            b: vec![5, 3],
            ka: vec![6, 7, 8, 9],
            kb: vec![10, 11, 1],
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut store = ParamStore::<f64>::new();
        let model = Ketm::new(small(true), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = model.predict(&store, &input()).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_knowledge_params_are_a_strict_subset() {
        let mut full = ParamStore::<f32>::new();
        let mut ablated = ParamStore::<f32>::new();
        Ketm::new(small(true), &mut full, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        Ketm::new(
            small(false),
            &mut ablated,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let full: Vec<&str> = full.names().collect();
        let ablated: Vec<&str> = ablated.names().collect();
        assert!(ablated.iter().all(|n| full.contains(n)));
        assert!(ablated.len() < full.len());
    }

    #[test]
    fn knowledge_forward_rejected_without_fusion() {
        let mut store = ParamStore::<f64>::new();
        let model = Ketm::new(small(false), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let opts = ForwardOptions {
            knowledge: true,
            gate: GateOverride::Computed,
        };
        assert!(model
            .forward(&mut tape, &store, &input(), opts, None)
            .is_err());
    }

    #[test]
    fn dropout_changes_output_only_when_enabled() {
        let mut store = ParamStore::<f64>::new();
        let model = Ketm::new(small(true), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let opts = model.default_options();
        let run = |rng: Option<&mut dyn RngCore>| {
            let mut tape = Tape::new();
            let out = model
                .forward(&mut tape, &store, &input(), opts, rng)
                .unwrap();
            tape.value(out.probs).clone()
        };
        let a: Tensor<f64> = run(None);
        let b = run(None);
        assert_eq!(a.data(), b.data());
        let c = run(Some(&mut ChaCha8Rng::seed_from_u64(9)));
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[0.2f64, 0.4, 0.4]), 1);
    }
}
