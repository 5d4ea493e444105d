//! Gated fusion of the text and knowledge representations, the classifier
//! head and the training loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Fusion weights `W₁, W₂`, each `[4·w × w]` for pooled width `w`.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub width: usize,
    pub w1: ParamId,
    pub w2: ParamId,
}

/// Replaces the computed gate with a constant, for tests and ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GateOverride {
    #[default]
    Computed,
    Constant(f64),
}

pub struct Fused {
    pub z: Var,
    /// `tanh(f W₁)`.
    pub transformed: Var,
    pub gate: Var,
}

impl FusionParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FusionParams {
            width,
            w1: store.add_glorot(format!("{prefix}.w1"), 4 * width, width, rng)?,
            w2: store.add_glorot(format!("{prefix}.w2"), 4 * width, width, rng)?,
        })
    }

    /// `f = [H; KH; H⊙KH; H−KH]`, `x̃ = tanh(f W₁)`, `g = σ(f W₂)`,
    /// `Z = g⊙x̃ + (1−g)⊙H`. Inputs of any shape with `width` entries are
    /// treated as one row; the result is `[1 × width]`.
    pub fn fuse<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        h: Var,
        kh: Var,
        gate: GateOverride,
    ) -> Result<Fused> {
        if tape.shape(h) != tape.shape(kh) {
            return Err(Error::dim("fuse", tape.shape(h), tape.shape(kh)));
        }
        if tape.value(h).numel() != self.width {
            return Err(Error::dim("fuse", tape.shape(h), &[self.width]));
        }
        let h = tape.reshape(h, vec![1, self.width])?;
        let kh = tape.reshape(kh, vec![1, self.width])?;
        let prod = tape.mul(h, kh)?;
        let diff = tape.sub(h, kh)?;
        let f = tape.concat_last(&[h, kh, prod, diff])?;

        let w1 = tape.param(store, self.w1);
        let transformed = tape.matmul(f, w1)?;
        let transformed = tape.tanh(transformed);
        let gate = match gate {
            GateOverride::Computed => {
                let w2 = tape.param(store, self.w2);
                let g = tape.matmul(f, w2)?;
                tape.sigmoid(g)
            }
            GateOverride::Constant(c) => tape.constant(Tensor::full(&[1, self.width], T::c(c))),
        };
        let open = tape.mul(gate, transformed)?;
        let closed = tape.one_minus(gate);
        let kept = tape.mul(closed, h)?;
        let z = tape.add(open, kept)?;
        Ok(Fused {
            z,
            transformed,
            gate,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// `softmax(tanh(Z W + b))`.
    #[default]
    Bounded,
    /// `softmax(Z W + b)`.
    Linear,
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounded" => Ok(Head::Bounded),
            "linear" => Ok(Head::Linear),
            other => Err(Error::Config(format!(
                "unknown head {other:?}, expected bounded or linear"
            ))),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Bounded => "bounded",
            Head::Linear => "linear",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub head: Head,
    pub classes: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Classifier {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        classes: usize,
        head: Head,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(Classifier {
            head,
            classes,
            w: store.add_glorot(format!("{prefix}.w"), width, classes, rng)?,
            b: store.add_zeros(format!("{prefix}.b"), &[classes])?,
        })
    }

    /// Class probabilities `[rows × K]` for `z[rows × width]`.
    pub fn classify<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let logits = tape.linear(z, w, Some(b))?;
        let logits = match self.head {
            Head::Bounded => tape.tanh(logits),
            Head::Linear => logits,
        };
        tape.softmax_rows(logits)
    }
}

/// Largest probability the bounded head can assign with `k` classes: logits
/// are confined to `[-1, 1]`, so the best case is `e / (e + (k-1)/e)`.
pub fn bounded_head_max_prob(k: usize) -> f64 {
    let e = std::f64::consts::E;
    e / (e + (k as f64 - 1.0) / e)
}

/// Mean negative log-likelihood over the batch.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(probs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(width: usize) -> (ParamStore<f64>, FusionParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let fusion = FusionParams::new(&mut store, "fusion", width, &mut rng).unwrap();
        (store, fusion, rng)
    }

    fn random_row(tape: &mut Tape<f64>, n: usize, rng: &mut ChaCha8Rng) -> Var {
        let v = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        tape.constant(Tensor::new(vec![n], v).unwrap())
    }

    #[test]
    fn closed_gate_returns_text_vector_exactly() {
        let (store, fusion, mut rng) = setup(6);
        let mut tape = Tape::new();
        let h = random_row(&mut tape, 6, &mut rng);
        let kh = random_row(&mut tape, 6, &mut rng);
        let out = fusion
            .fuse(&mut tape, &store, h, kh, GateOverride::Constant(0.0))
            .unwrap();
        assert_eq!(tape.value(out.z).data(), tape.value(h).data());
    }

    #[test]
    fn open_gate_returns_transformed_features() {
        let (store, fusion, mut rng) = setup(5);
        let mut tape = Tape::new();
        let h = random_row(&mut tape, 5, &mut rng);
        let kh = random_row(&mut tape, 5, &mut rng);
        let out = fusion
            .fuse(&mut tape, &store, h, kh, GateOverride::Constant(1.0))
            .unwrap();
        assert_eq!(tape.value(out.z).data(), tape.value(out.transformed).data());
    }

    #[test]
    fn output_lies_between_transformed_and_text() {
        let (store, fusion, mut rng) = setup(8);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let h = random_row(&mut tape, 8, &mut rng);
            let kh = random_row(&mut tape, 8, &mut rng);
            let out = fusion
                .fuse(&mut tape, &store, h, kh, GateOverride::Computed)
                .unwrap();
            let z = tape.value(out.z).data();
            let x = tape.value(out.transformed).data();
            let hv = tape.value(h).data();
            for i in 0..8 {
                assert!(z[i] >= x[i].min(hv[i]) - 1e-12 && z[i] <= x[i].max(hv[i]) + 1e-12);
            }
            assert!(tape
                .value(out.gate)
                .data()
                .iter()
                .all(|&g| g > 0.0 && g < 1.0));
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let (store, fusion, mut rng) = setup(4);
        let mut tape = Tape::new();
        let h = random_row(&mut tape, 4, &mut rng);
        let kh = random_row(&mut tape, 3, &mut rng);
        assert!(matches!(
            fusion.fuse(&mut tape, &store, h, kh, GateOverride::Computed),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let c = Classifier::new(&mut store, "out", 4, 3, Head::Bounded, &mut rng).unwrap();
        store.get_mut(c.w).value.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let z = random_row(&mut tape, 4, &mut rng);
        let z = tape.reshape(z, vec![1, 4]).unwrap();
        let y = c.classify(&mut tape, &store, z).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_loss_is_ln_k() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(&[2, 3], 1.0 / 3.0));
        let loss = cross_entropy(&mut tape, p, &[0, 2]).unwrap();
        assert!((tape.value(loss).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bound_value() {
        assert!((bounded_head_max_prob(3) - 0.7870).abs() < 1e-4);
        assert!((bounded_head_max_prob(2) - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn head_parses() {
        assert_eq!("linear".parse::<Head>().unwrap(), Head::Linear);
        assert!("softmax".parse::<Head>().is_err());
    }
}
