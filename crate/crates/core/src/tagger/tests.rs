use super::*;
use crate::embeddings::WordVectorStore;
use crate::eval::{StaticVectors, TaskKind};

fn cfg(width: usize, channels: usize, units: usize) -> TaggerConfig {
    TaggerConfig {
        conv_width: width,
        conv_channels: channels,
        dense_units: units,
        lr: 0.05,
        epochs: 5,
        freeze_embeddings: true,
        seed: 3,
    }
}

fn tags(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, len: usize, dim: usize, k: usize) -> SentenceBatch<f64> {
    let x = Matrix::from_vec(len, dim, (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let gold = (0..len).map(|_| rng.gen_range(0..k)).collect();
    let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
    mask[rng.gen_range(0..len)] = true;
    SentenceBatch::new(x, gold, mask).unwrap()
}

fn randomize(model: &mut TaggerModel<f64>, rng: &mut ChaCha8Rng) {
    for s in model.params.slices_mut() {
        for x in s {
            *x = rng.gen_range(-0.8..0.8);
        }
    }
}

#[test]
fn zero_network_emits_bias() {
    let mut m = TaggerModel::<f64>::new(cfg(3, 4, 4), 2, tags(3)).unwrap();
    m.params = TaggerParams::zeros(m.shape());
    m.params.proj_b = vec![0.5, -1.0, 2.0];
    let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let e = forward(&x, &m).unwrap().emissions;
    for t in 0..2 {
        assert_eq!(e.row(t), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn identity_chain_is_relu() {
    let n = 3;
    let mut m = TaggerModel::<f64>::new(cfg(1, n, n), n, tags(n)).unwrap();
    m.params = TaggerParams::zeros(m.shape());
    for i in 0..n {
        m.params.conv_w[i * n + i] = 1.0;
        m.params.dense_w[i * n + i] = 1.0;
        m.params.proj_w[i * n + i] = 1.0;
    }
    let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, -0.1, 3.0, 0.0]);
    let e = forward(&x, &m).unwrap().emissions;
    assert_eq!(e.as_slice(), &[1.0, 0.0, 0.5, 0.0, 3.0, 0.0]);
}

#[test]
fn hand_computed_forward() {
    let mut m = TaggerModel::<f64>::new(cfg(3, 1, 1), 2, tags(2)).unwrap();
    let p = &mut m.params;
    // [offset][dim][channel]: left neighbour, centre, right neighbour
    p.conv_w = vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
    p.conv_b = vec![1.0];
    p.dense_w = vec![2.0];
    p.dense_b = vec![-0.1];
    p.proj_w = vec![1.0, -3.0];
    p.proj_b = vec![0.25, 0.5];
    let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]);
    let a = forward(&x, &m).unwrap();
    // t0: 1 + (0.3 - 0.8) + (-0.5 + 0.3) = 0.3; t1: 1 + (0.1 + 0.4) + (-0.3 - 0.2) = 1.0
    let close = |got: &[f64], want: &[f64]| got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-10);
    assert!(close(a.conv.as_slice(), &[0.3, 1.0]));
    // dense: 2h - 0.1 = 0.5, 1.9
    assert!(close(a.dense.as_slice(), &[0.5, 1.9]));
    assert!(close(a.emissions.as_slice(), &[0.75, -1.0, 2.15, -5.2]), "{:?}", a.emissions);
}

#[test]
fn forward_rejects_wrong_dim() {
    let m = TaggerModel::<f64>::new(cfg(3, 2, 2), 2, tags(2)).unwrap();
    assert!(matches!(forward(&Matrix::zeros(2, 3), &m), Err(Error::Shape(_))));
    assert!(matches!(forward(&Matrix::zeros(0, 2), &m), Err(Error::EmptySentence)));
}

fn block_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = crate::num::norm(a) + crate::num::norm(n);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for case in 0..8 {
        let (dim, k, len) = (3, 3, 1 + case % 4);
        let mut m = TaggerModel::<f64>::new(cfg(3, 4, 3), dim, tags(k)).unwrap();
        randomize(&mut m, &mut rng);
        let batch = random_batch(&mut rng, len, dim, k);
        let g = backward(&batch, &m, false).unwrap();
        assert!((g.loss - sentence_loss(&batch, &m).unwrap()).abs() < 1e-12);
        let analytic = g.params.slices().map(|s| s.to_vec());
        for (b, name) in PARAM_NAMES.iter().enumerate() {
            let n_len = m.params.slices()[b].len();
            let mut numeric = vec![0.0; n_len];
            for i in 0..n_len {
                let orig = m.params.slices()[b][i];
                m.params.slices_mut()[b][i] = orig + h;
                let up = sentence_loss(&batch, &m).unwrap();
                m.params.slices_mut()[b][i] = orig - h;
                let down = sentence_loss(&batch, &m).unwrap();
                m.params.slices_mut()[b][i] = orig;
                numeric[i] = (up - down) / (2.0 * h);
            }
            let err = block_rel_err(&analytic[b], &numeric);
            assert!(err <= 1e-4, "case {case} {name}: {err}");
        }
        let dx = g.embeddings.unwrap();
        let mut numeric = vec![0.0; len * dim];
        for i in 0..len * dim {
            let mut bp = batch.clone();
            bp.embeddings.as_mut_slice()[i] += h;
            let up = sentence_loss(&bp, &m).unwrap();
            bp.embeddings.as_mut_slice()[i] -= 2.0 * h;
            let down = sentence_loss(&bp, &m).unwrap();
            numeric[i] = (up - down) / (2.0 * h);
        }
        let err = block_rel_err(dx.as_slice(), &numeric);
        assert!(err <= 1e-4, "case {case} embeddings: {err}");
    }
}

#[test]
fn frozen_has_no_embedding_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = TaggerModel::<f64>::new(cfg(3, 4, 3), 3, tags(3)).unwrap();
    let batch = random_batch(&mut rng, 3, 3, 3);
    assert!(backward(&batch, &m, true).unwrap().embeddings.is_none());
    assert!(backward(&batch, &m, false).unwrap().embeddings.is_some());
}

#[test]
fn separable_optimum_is_stationary() {
    let k = 3;
    let mut m = TaggerModel::<f64>::new(cfg(1, k, k), k, tags(k)).unwrap();
    m.params = TaggerParams::zeros(m.shape());
    for i in 0..k {
        m.params.conv_w[i * k + i] = 1.0;
        m.params.dense_w[i * k + i] = 1.0;
        m.params.proj_w[i * k + i] = 50.0;
    }
    let gold = vec![0, 2, 1, 1];
    let mut x = Matrix::zeros(4, k);
    for (t, &y) in gold.iter().enumerate() {
        x.set(t, y, 1.0);
    }
    let batch = SentenceBatch::new(x, gold, vec![true; 4]).unwrap();
    let g = backward(&batch, &m, true).unwrap();
    assert!(g.params.norm() < 1e-6, "{}", g.params.norm());
    assert!(g.loss < 1e-6);
}

fn store(words: &[&str], dim: usize, seed: u64) -> StaticVectors<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = words.len() * dim;
    let v = Matrix::from_vec(words.len(), dim, (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect());
    StaticVectors::new(WordVectorStore::new(words.iter().map(|w| w.to_string()).collect(), v).unwrap())
}

fn dataset(sents: &[(&[&str], &[&str])], task: TaskKind) -> TagDataset {
    let s = sents
        .iter()
        .enumerate()
        .map(|(i, (w, t))| {
            Sentence::new(i, w.iter().map(|x| x.to_string()).collect(), t.iter().map(|x| x.to_string()).collect())
        })
        .collect();
    TagDataset::new(s, task)
}

#[test]
fn single_tag_dataset_is_learned() {
    let emb = store(&["a", "b", "c"], 4, 1);
    let d = dataset(
        &[(&["a", "b"], &["N", "N"]), (&["c"], &["N"]), (&["b", "a", "c"], &["N", "N", "N"])],
        TaskKind::Pos,
    );
    let t = train_tagger(&d, None, &emb, &cfg(3, 8, 8)).unwrap();
    assert_eq!(evaluate(&d, &emb, &t.model).unwrap(), 1.0);
    assert_eq!(t.curve.len(), 5);
}

#[test]
fn transitions_learn_previous_tag_rule() {
    let emb = store(&["w"], 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let names = ["A", "B", "C"];
    let mut sents = Vec::new();
    for i in 0..40 {
        let len = rng.gen_range(2..9);
        let ts: Vec<String> = (0..len).map(|t| names[t % 3].to_string()).collect();
        sents.push(Sentence::new(i, vec!["w".to_string(); len], ts));
    }
    let d = TagDataset::new(sents, TaskKind::Pos);
    let mut c = cfg(3, 4, 4);
    c.epochs = 15;
    c.lr = 0.1;
    let t = train_tagger(&d, None, &emb, &c).unwrap();
    assert!(evaluate(&d, &emb, &t.model).unwrap() >= 0.99);
}

#[test]
fn unknown_tag_is_rejected() {
    let emb = store(&["a"], 2, 1);
    let d = dataset(&[(&["a"], &["Z"])], TaskKind::Pos);
    let err = train_tagger_with_tags(&d, None, &emb, &cfg(3, 2, 2), vec!["N".into()]);
    assert!(matches!(err, Err(Error::UnknownTag(t)) if t == "Z"));
}

#[test]
fn single_token_prediction_is_unary_argmax() {
    let emb = store(&["a", "b"], 3, 4);
    let mut m = TaggerModel::<f64>::new(cfg(3, 4, 4), 3, tags(4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    randomize(&mut m, &mut rng);
    let s = Sentence::new(0, vec!["b".into()], vec!["T0".into()]);
    let e = forward(&emb.embed(&s).unwrap(), &m).unwrap().emissions;
    let scores: Vec<f64> = (0..4).map(|y| e.get(0, y) + m.params.start[y] + m.params.stop[y]).collect();
    let best = (0..4).fold(0, |b, y| if scores[y] > scores[b] { y } else { b });
    let p = predict(&s, &emb, &m).unwrap();
    assert_eq!(p.tags, vec![format!("T{best}")]);
}

#[test]
fn prediction_flags_masked_positions() {
    let emb = store(&["a", "b"], 2, 4);
    let m = TaggerModel::<f64>::new(cfg(3, 2, 2), 2, tags(2)).unwrap();
    let mut s = Sentence::new(0, vec!["a".into(), "b".into()], vec!["T0".into(), "T1".into()]);
    s.mask = vec![true, false];
    let p = predict(&s, &emb, &m).unwrap();
    assert_eq!(p.tags.len(), 2);
    assert_eq!(p.excluded, vec![false, true]);
}

#[test]
fn memorized_set_agrees_with_decoding() {
    let emb = store(&["x", "y", "z"], 4, 8);
    let d = dataset(
        &[(&["x", "y", "z"], &["P", "Q", "R"]), (&["z", "x"], &["R", "P"]), (&["y"], &["Q"])],
        TaskKind::Pos,
    );
    let mut c = cfg(3, 8, 8);
    c.epochs = 30;
    let t = train_tagger(&d, None, &emb, &c).unwrap();
    for s in &d.sentences {
        let p = predict(s, &emb, &t.model).unwrap();
        let ids = decode(&t.model.inputs(s, &emb).unwrap(), &t.model).unwrap();
        let via_decode: Vec<String> = ids.into_iter().map(|i| t.model.tags[i].clone()).collect();
        assert_eq!(p.tags, via_decode);
        assert_eq!(p.tags, s.tags);
    }
}

#[test]
fn training_is_reproducible() {
    let emb = store(&["a", "b", "c"], 3, 1);
    let d = dataset(&[(&["a", "b"], &["X", "Y"]), (&["c", "a"], &["Y", "X"])], TaskKind::Pos);
    let mut c = cfg(3, 4, 4);
    c.freeze_embeddings = false;
    let a = train_tagger(&d, None, &emb, &c).unwrap();
    let b = train_tagger(&d, None, &emb, &c).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.model.tuned.is_some());
}

#[test]
fn contextual_source_cannot_be_tuned() {
    let mut ctx = crate::eval::ContextualVectors::<f64>::new(2);
    ctx.insert(0, 0, vec![1.0, 0.0]).unwrap();
    let d = dataset(&[(&["a"], &["X"])], TaskKind::Pos);
    let mut c = cfg(3, 2, 2);
    c.freeze_embeddings = false;
    assert!(matches!(train_tagger(&d, None, &ctx, &c), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip() {
    let emb = store(&["a", "b"], 3, 1);
    let d = dataset(&[(&["a", "b"], &["X", "Y"])], TaskKind::Pos);
    let mut c = cfg(3, 4, 4);
    c.freeze_embeddings = false;
    let m: TaggerModel<f32> = {
        let store32 = StaticVectors::new(
            WordVectorStore::new(
                emb.store().words().to_vec(),
                Matrix::from_vec(2, 3, emb.store().vectors().as_slice().iter().map(|&x| x as f32).collect()),
            )
            .unwrap(),
        );
        train_tagger(&d, None, &store32, &c).unwrap().model
    };
    let mut buf = Vec::new();
    write_tagger(&m, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"MTB1");
    let back: TaggerModel<f32> = read_tagger(&buf[..]).unwrap();
    assert_eq!(back, m);
    assert!(matches!(read_tagger::<f32, _>(&buf[..buf.len() - 1]), Err(Error::Format { .. })));
}

#[test]
fn config_validation() {
    let d = TaggerConfig::default();
    assert!(d.validate().is_ok());
    assert_eq!((d.epochs, d.conv_width, d.freeze_embeddings), (20, 3, true));
    assert!(cfg(2, 1, 1).validate().is_err());
    assert!(cfg(3, 0, 1).validate().is_err());
}
