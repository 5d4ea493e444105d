use ketm::embedding::{Embedder, EmbeddingTable, PAD_ID};
use ketm::gradcheck::{grad_check, GradCheckOptions, GradReport};
use ketm::matching::{pool, MatchConfig, Matcher, Seq};
use ketm::tape::{Reduce, Tape, Var};
use ketm::{ParamId, ParamStore, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 6;

fn config(blocks: usize) -> MatchConfig {
    MatchConfig {
        hidden: 8,
        heads: 2,
        conv_width: 3,
        blocks,
        dropout: 0.0,
    }
}

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

struct Setup {
    store: ParamStore<f64>,
    matcher: Matcher,
    x: ParamId,
    y: ParamId,
}

/// A matcher plus two random input sequences registered as parameters, so
/// the checks also cover the gradient with respect to the inputs.
fn setup(seed: u64, blocks: usize, m: usize, n: usize, width: usize) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let matcher = Matcher::new(config(blocks), K, &mut store, "match", &mut rng).unwrap();
    let x = store.add("input.x", random(&mut rng, &[m, width])).unwrap();
    let y = store.add("input.y", random(&mut rng, &[n, width])).unwrap();
    Setup {
        store,
        matcher,
        x,
        y,
    }
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let r = tape.constant(random(&mut rng, tape.shape(out)));
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

fn assert_passes(report: &GradReport, tolerance: f64) {
    assert!(report.max_rel_err() < tolerance, "{report}");
}

fn inputs(tape: &mut Tape<f64>, s: &Setup) -> (Seq, Seq) {
    let x = tape.param(&s.store, s.x);
    let y = tape.param(&s.store, s.y);
    (Seq::full(tape, x), Seq::full(tape, y))
}

#[test]
fn encoder_gradients() {
    for seed in 0..3 {
        let mut s = setup(seed, 1, 5, 1, K);
        let matcher = s.matcher.clone();
        let (xid, yid) = (s.x, s.y);
        let report = grad_check(&mut s.store, &GradCheckOptions::default(), |tape, store| {
            let x = tape.param(store, xid);
            let _ = tape.param(store, yid);
            let out = matcher.encode(tape, store, &matcher.blocks[0], Seq::full(tape, x))?;
            weighted_sum(tape, out.p)
        })
        .unwrap();
        assert_passes(&report, 1e-4);
    }
}

#[test]
fn co_attention_gradients() {
    for seed in 0..3 {
        let mut s = setup(seed, 1, 4, 3, 8);
        let matcher = s.matcher.clone();
        let (xid, yid) = (s.x, s.y);
        let report = grad_check(&mut s.store, &GradCheckOptions::default(), |tape, store| {
            let p = tape.param(store, xid);
            let h = tape.param(store, yid);
            let (p, h) = (Seq::full(tape, p), Seq::full(tape, h));
            let co = matcher.co_attention(tape, store, &matcher.blocks[0], p, h)?;
            let both = tape.concat_rows(&[co.p_attn, co.h_attn])?;
            weighted_sum(tape, both)
        })
        .unwrap();
        assert_passes(&report, 1e-4);
    }
}

#[test]
fn aggregation_gradients() {
    for seed in 0..3 {
        let mut s = setup(seed, 1, 4, 4, 8);
        let matcher = s.matcher.clone();
        let (xid, yid) = (s.x, s.y);
        let report = grad_check(&mut s.store, &GradCheckOptions::default(), |tape, store| {
            let p = tape.param(store, xid);
            let pa = tape.param(store, yid);
            let c = matcher.aggregate(tape, store, &matcher.blocks[0], p, pa)?;
            weighted_sum(tape, c)
        })
        .unwrap();
        assert_passes(&report, 1e-4);
    }
}

#[test]
fn bidirectional_attention_gradients() {
    for seed in 0..3 {
        let mut s = setup(seed, 1, 4, 3, 8);
        let matcher = s.matcher.clone();
        let (xid, yid) = (s.x, s.y);
        let report = grad_check(&mut s.store, &GradCheckOptions::default(), |tape, store| {
            let c = tape.param(store, xid);
            let q = tape.param(store, yid);
            let (c, q) = (Seq::full(tape, c), Seq::full(tape, q));
            let bi = matcher.bidirectional_attention(tape, store, c, q)?;
            weighted_sum(tape, bi.g)
        })
        .unwrap();
        assert_passes(&report, 1e-4);
    }
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let g = store.add("g", random(&mut rng, &[5, 8])).unwrap();
    let report = grad_check(&mut store, &GradCheckOptions::default(), |tape, store| {
        let g = tape.param(store, g);
        let g = Seq::full(tape, g);
        let h = pool(tape, g)?;
        weighted_sum(tape, h)
    })
    .unwrap();
    assert_passes(&report, 1e-4);
}

#[test]
fn full_matcher_gradients() {
    let mut s = setup(4, 2, 4, 3, K);
    let matcher = s.matcher.clone();
    let (xid, yid) = (s.x, s.y);
    let report = grad_check(&mut s.store, &GradCheckOptions::default(), |tape, store| {
        let x = tape.param(store, xid);
        let y = tape.param(store, yid);
        let out = matcher.forward(tape, store, Seq::full(tape, x), Seq::full(tape, y))?;
        weighted_sum(tape, out.h)
    })
    .unwrap();
    assert_passes(&report, 1e-3);
}

#[test]
fn encoder_shapes_and_single_token_attention() {
    for m in [1, 5, 128] {
        let s = setup(0, 1, m, 1, K);
        let mut tape = Tape::new();
        let (x, _) = inputs(&mut tape, &s);
        let out = s
            .matcher
            .encode(&mut tape, &s.store, &s.matcher.blocks[0], x)
            .unwrap();
        assert_eq!(tape.shape(out.p), &[m, 8]);
        if m == 1 {
            for w in &out.self_attention {
                assert_eq!(tape.value(*w).data(), &[1.0]);
            }
        }
    }
}

#[test]
fn single_token_co_attention_swaps_sequences() {
    let s = setup(3, 1, 1, 1, 8);
    let mut tape = Tape::new();
    let (p, h) = inputs(&mut tape, &s);
    let co = s
        .matcher
        .co_attention(&mut tape, &s.store, &s.matcher.blocks[0], p, h)
        .unwrap();
    assert_eq!(tape.value(co.weights).data(), &[1.0]);
    assert_eq!(tape.value(co.p_attn).data(), tape.value(h.var).data());
    assert_eq!(tape.value(co.h_attn).data(), tape.value(p.var).data());
}

#[test]
fn co_attention_rows_are_convex_combinations() {
    for seed in 0..10 {
        let s = setup(seed, 1, 5, 7, 8);
        let mut tape = Tape::new();
        let (p, h) = inputs(&mut tape, &s);
        let co = s
            .matcher
            .co_attention(&mut tape, &s.store, &s.matcher.blocks[0], p, h)
            .unwrap();
        let a = tape.value(co.weights);
        for i in 0..5 {
            let sum: f64 = a.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6 && a.row(i).iter().all(|&w| w >= 0.0));
        }
        let hv = tape.value(h.var);
        let pa = tape.value(co.p_attn);
        for j in 0..8 {
            let col: Vec<f64> = (0..7).map(|r| hv.at(r, j)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..5 {
                assert!(pa.at(i, j) >= lo - 1e-12 && pa.at(i, j) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn aggregate_matches_manual_composition() {
    let s = setup(2, 1, 3, 3, 8);
    let block = &s.matcher.blocks[0];
    let mut tape = Tape::new();
    let (p, _) = inputs(&mut tape, &s);
    let p = p.var;
    let c = s
        .matcher
        .aggregate(&mut tape, &s.store, block, p, p)
        .unwrap();

    // With P' = P the difference branch sees [P; 0].
    let zeros = tape.constant(Tensor::zeros(&[3, 8]));
    let a1_in = tape.concat_last(&[p, p]).unwrap();
    let a2_in = tape.concat_last(&[p, zeros]).unwrap();
    let sq = tape.mul(p, p).unwrap();
    let a3_in = tape.concat_last(&[p, sq]).unwrap();
    let mut branches = Vec::new();
    for (layer, input) in [
        (&block.agg_concat, a1_in),
        (&block.agg_diff, a2_in),
        (&block.agg_prod, a3_in),
    ] {
        let out = layer.forward(&mut tape, &s.store, input).unwrap();
        branches.push(tape.relu(out));
    }
    let joined = tape.concat_last(&branches).unwrap();
    let out = block.agg_out.forward(&mut tape, &s.store, joined).unwrap();
    let expected = tape.relu(out);
    assert_eq!(tape.value(c).data(), tape.value(expected).data());
}

#[test]
fn bidirectional_attention_degenerate_cases() {
    // One query row: every attended query vector is that row.
    let s = setup(5, 1, 4, 1, 8);
    let mut tape = Tape::new();
    let (c, q) = inputs(&mut tape, &s);
    let bi = s
        .matcher
        .bidirectional_attention(&mut tape, &s.store, c, q)
        .unwrap();
    assert_eq!(tape.shape(bi.g), &[4, 32]);
    let g = tape.value(bi.g);
    let (cv, qv) = (tape.value(c.var), tape.value(q.var));
    for i in 0..4 {
        for j in 0..8 {
            assert_eq!(g.at(i, 24 + j), cv.at(i, j) * qv.at(0, j));
        }
    }

    // One context row: the query-to-context summary is that row.
    let s = setup(6, 1, 1, 5, 8);
    let mut tape = Tape::new();
    let (c, q) = inputs(&mut tape, &s);
    let bi = s
        .matcher
        .bidirectional_attention(&mut tape, &s.store, c, q)
        .unwrap();
    assert_eq!(tape.value(bi.beta).data(), &[1.0]);
    assert_eq!(&tape.value(bi.g).data()[8..16], tape.value(c.var).data());
}

#[test]
fn attention_distributions_normalize() {
    let s = setup(8, 1, 6, 4, 8);
    let mut tape = Tape::new();
    let (c, q) = inputs(&mut tape, &s);
    let bi = s
        .matcher
        .bidirectional_attention(&mut tape, &s.store, c, q)
        .unwrap();
    for w in [bi.alpha, bi.beta] {
        let t = tape.value(w);
        let (r, _) = t.dims2().unwrap();
        for i in 0..r {
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn single_row_pool_repeats_the_row() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(
        Tensor::vector(vec![1.0, -2.0, 3.0])
            .unwrap()
            .reshape(vec![1, 3])
            .unwrap(),
    );
    let g = Seq::full(&tape, g);
    let h = pool(&mut tape, g).unwrap();
    assert_eq!(tape.value(h).data(), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
}

#[test]
fn output_width_is_independent_of_lengths() {
    for (m, n) in [(1, 1), (3, 9), (12, 2)] {
        let s = setup(0, 2, m, n, K);
        let mut tape = Tape::new();
        let (x, y) = inputs(&mut tape, &s);
        let out = s.matcher.forward(&mut tape, &s.store, x, y).unwrap();
        assert_eq!(tape.shape(out.h), &[64]);
        assert_eq!(tape.shape(out.attention), &[m, n]);
    }
}

#[test]
fn single_block_equals_layer_composition() {
    let s = setup(9, 1, 4, 3, K);
    let m = &s.matcher;
    let block = &m.blocks[0];
    let mut tape = Tape::new();
    let (x, y) = inputs(&mut tape, &s);
    let out = m.forward(&mut tape, &s.store, x, y).unwrap();

    let p = m.encode(&mut tape, &s.store, block, x).unwrap().p;
    let h = m.encode(&mut tape, &s.store, block, y).unwrap().p;
    let (ps, hs) = (Seq::full(&tape, p), Seq::full(&tape, h));
    let co = m.co_attention(&mut tape, &s.store, block, ps, hs).unwrap();
    let c = m
        .aggregate(&mut tape, &s.store, block, p, co.p_attn)
        .unwrap();
    let q = m
        .aggregate(&mut tape, &s.store, block, h, co.h_attn)
        .unwrap();
    let (cs, qs) = (Seq::full(&tape, c), Seq::full(&tape, q));
    let bi = m
        .bidirectional_attention(&mut tape, &s.store, cs, qs)
        .unwrap();
    let g = Seq::full(&tape, bi.g);
    let max = tape.reduce_seq(g.var, Reduce::Max).unwrap();
    let mean = tape.reduce_seq(g.var, Reduce::Mean).unwrap();
    let expected = tape.concat_last(&[max, mean]).unwrap();
    assert_eq!(tape.value(out.h).data(), tape.value(expected).data());
}

#[test]
fn padding_does_not_change_the_match() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let table = EmbeddingTable::new(&mut store, "emb", 20, K, &mut rng).unwrap();
        let matcher = Matcher::new(config(2), K, &mut store, "match", &mut rng).unwrap();
        let a: Vec<usize> = (0..4).map(|_| rng.gen_range(2..20)).collect();
        let b: Vec<usize> = (0..3).map(|_| rng.gen_range(2..20)).collect();
        let run = |pad_a: usize, pad_b: usize| {
            let mut tape = Tape::new();
            let mut ia = a.clone();
            ia.extend(std::iter::repeat_n(PAD_ID, pad_a));
            let mut ib = b.clone();
            ib.extend(std::iter::repeat_n(PAD_ID, pad_b));
            let x = table.embed(&mut tape, &store, &ia).unwrap();
            let y = table.embed(&mut tape, &store, &ib).unwrap();
            let x = Seq {
                var: x,
                valid: a.len(),
            };
            let y = Seq {
                var: y,
                valid: b.len(),
            };
            let out = matcher.forward(&mut tape, &store, x, y).unwrap();
            tape.value(out.h).data().to_vec()
        };
        let plain = run(0, 0);
        for (pa, pb) in [(3, 0), (0, 5), (2, 7)] {
            let padded = run(pa, pb);
            for (u, v) in plain.iter().zip(&padded) {
                assert!((u - v).abs() < 1e-5, "pad ({pa},{pb}): {u} vs {v}");
            }
        }
    }
}

#[test]
fn text_and_knowledge_passes_touch_the_same_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let table = EmbeddingTable::new(&mut store, "emb", 30, K, &mut rng).unwrap();
    let matcher = Matcher::new(config(2), K, &mut store, "match", &mut rng).unwrap();
    let names = |a: &[usize], b: &[usize]| {
        let mut tape = Tape::new();
        let x = table.embed(&mut tape, &store, a).unwrap();
        let y = table.embed(&mut tape, &store, b).unwrap();
        let (x, y) = (Seq::full(&tape, x), Seq::full(&tape, y));
        matcher.forward(&mut tape, &store, x, y).unwrap();
        let mut n: Vec<String> = tape
            .touched_params()
            .into_iter()
            .map(|id| store.get(id).name.clone())
            .collect();
        n.sort();
        n
    };
    let text = names(&[2, 3, 4], &[5, 6]);
    let knowledge = names(&[7, 8, 9, 10, 11, 12], &[13, 14, 15, 16]);
    assert_eq!(text, knowledge);
    assert_eq!(text.len(), store.len());
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut MatchConfig)| {
        let mut c = config(1);
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.conv_width = 4));
    assert!(bad(|c| c.blocks = 0));
    assert!(bad(|c| c.heads = 3));
    assert!(bad(|c| c.hidden = 7));
    assert!(config(2).validate().is_ok());
    assert_eq!(MatchConfig::default().output_dim(), 1600);
}
