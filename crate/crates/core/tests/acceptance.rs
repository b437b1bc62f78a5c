//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL|INFO`
//! line straight to stdout (visible without `--nocapture`) before asserting.
//!
//! ```text
//! cargo test --release -p mtsm --test acceptance
//! ```

mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use mtsm::attention::gated_weights;
use mtsm::data::{synth_corpus, CaptionLine, DetectionSet, TokenId, Vocabulary, BOS};
use mtsm::decoding::{beam_search, greedy_decode, greedy_search, ModelScorer};
use mtsm::geometry::{relative_geometry, BoundingBox, LogBase, DEFAULT_EPS_CENTER};
use mtsm::gradcheck::{run_preset, DEFAULT_TOLERANCE};
use mtsm::metrics::{corpus_bleu, BleuReport};
use mtsm::model::{CaptionModel, ModelConfig};
use mtsm::tensor::Tensor;
use mtsm::training::{evaluate_loss, pair_examples, TrainConfig, TrainOutputs, Trainer};
use rand::seq::SliceRandom;
use rand::Rng;

fn report(id: &str, title: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:<2} {title:<38} {status}  {detail}");
}

fn info(id: &str, title: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:<2} {title:<38} INFO  {detail}");
}

#[test]
fn criterion_1_gradient_check() {
    let start = Instant::now();
    let cfg = ModelConfig::tiny(12);
    assert_eq!((cfg.d_model, cfg.layers, cfg.heads), (16, 1, 2));
    let rep = run_preset(cfg.clone(), 0, 3, 4).unwrap();
    let secs = start.elapsed().as_secs_f64();

    // Every parameter is covered and W_G receives a non-trivial gradient.
    let model = CaptionModel::new(cfg.clone(), 0).unwrap();
    let names: Vec<&str> = model.params.names().collect();
    let covered = names.iter().all(|n| rep.params.iter().any(|p| p.name == *n));
    let (det, _) = mtsm::data::synth_scene(0, 3, cfg.d_feat).unwrap();
    let grads = {
        let mut sess = model.training_session(0);
        let logits = model.forward(&mut sess, &det, &[BOS, 5, 6, 7]).unwrap();
        let loss = mtsm::training::masked_xe_loss(&mut sess.graph, logits, &[5, 6, 7, 2], 0).unwrap();
        let g = sess.graph.backward(loss).unwrap();
        sess.param_grads(&g)
    };
    let wg_norm: f64 = grads["enc.0.w_g"].data().iter().map(|v| v * v).sum::<f64>().sqrt();

    let ok = rep.passed(DEFAULT_TOLERANCE) && covered && names.contains(&"enc.0.w_g") && wg_norm > 0.0 && secs < 60.0;
    report(
        "1",
        "gradient check (tiny, N=3, T=4)",
        ok,
        &format!(
            "max rel err {:.2e} in {} over {} params, |dL/dW_G| {:.2e}, {:.1}s",
            rep.max_relative_error,
            rep.worst,
            rep.params.len(),
            wg_norm,
            secs
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_gated_softmax() {
    let mut r = rng(2);
    let (mut worst_sum, mut worst_const, mut worst_oracle) = (0.0f64, 0.0f64, 0.0f64);
    let mut monotone = true;
    for _ in 0..1000 {
        let (n, m) = (r.random_range(1..8), r.random_range(1..8));
        let a = random_tensor(&mut r, &[n, m], 5.0);
        let mut g = random_tensor(&mut r, &[n, m], 3.0);
        for v in g.data_mut() {
            // Non-negative with exact zeros, as after the ReLU.
            *v = v.max(0.0);
        }
        let w = gated_weights(&a, Some(&g), None, 1e-6).unwrap();
        for i in 0..n {
            worst_sum = worst_sum.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let oracle = gated_softmax_oracle(&rows(&a), Some(&rows(&g)), 1e-6);
        for (i, row) in oracle.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                worst_oracle = worst_oracle.max((w.row(i)[j] - p).abs());
            }
        }

        let c = Tensor::filled(&[n, m], r.random_range(0.0..10.0));
        let wc = gated_weights(&a, Some(&c), None, 1e-6).unwrap();
        let plain = gated_softmax_oracle(&rows(&a), None, 0.0);
        for (i, row) in plain.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                worst_const = worst_const.max((wc.row(i)[j] - p).abs());
            }
        }

        // Raising one gate entry raises its weight and lowers the rest of the row.
        let (i, j) = (r.random_range(0..n), r.random_range(0..m));
        let mut g2 = g.clone();
        g2.data_mut()[i * m + j] += r.random_range(0.01..2.0);
        let w2 = gated_weights(&a, Some(&g2), None, 1e-6).unwrap();
        for jj in 0..m {
            let (before, after) = (w.row(i)[jj], w2.row(i)[jj]);
            let fine = if jj == j {
                after > before || (m == 1 && after == before) || before > 1.0 - 1e-15
            } else {
                after <= before
            };
            monotone &= fine;
        }
    }
    let ok = worst_sum <= 1e-9 && worst_const <= 1e-12 && monotone && worst_oracle <= 1e-12;
    report(
        "2",
        "gated softmax contract (1000 draws)",
        ok,
        &format!(
            "max |Σ-1| {worst_sum:.1e}, const gate vs softmax {worst_const:.1e}, vs literal formula {worst_oracle:.1e}, monotone {monotone}"
        ),
    );
    assert!(ok);
}

fn similarity(b: &BoundingBox, s: f64, tx: f64, ty: f64) -> BoundingBox {
    BoundingBox::new(s * (b.cx - 0.5) + 0.5 + tx, s * (b.cy - 0.5) + 0.5 + ty, s * b.w, s * b.h)
}

#[test]
fn criterion_3_geometry_invariance() {
    let mut r = rng(3);
    let mut cfg = ModelConfig::tiny(10);
    cfg.layers = 2;
    let (mut worst_delta, mut worst_enc) = (0.0f64, 0.0f64);
    for scene in 0..100 {
        let n = r.random_range(1..=8);
        let det = random_detections(&mut r, n, cfg.d_feat);
        let (s, tx, ty) = (r.random_range(0.5..1.5), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
        let moved_boxes: Vec<_> = det.boxes.iter().map(|b| similarity(b, s, tx, ty)).collect();
        let moved = DetectionSet::new("moved", moved_boxes, det.scores.clone(), det.features.clone()).unwrap();

        let a = relative_geometry(&det.boxes, DEFAULT_EPS_CENTER, LogBase::Ten).unwrap();
        let b = relative_geometry(&moved.boxes, DEFAULT_EPS_CENTER, LogBase::Ten).unwrap();
        worst_delta = worst_delta.max(a.delta().max_abs_diff(b.delta()));

        let model = CaptionModel::new(cfg.clone(), scene).unwrap();
        worst_enc = worst_enc.max(model.memory(&det).unwrap().max_abs_diff(&model.memory(&moved).unwrap()));
    }
    let ok = worst_delta < 1e-12 && worst_enc < 1e-9;
    report(
        "3",
        "geometry similarity invariance",
        ok,
        &format!("max δ change {worst_delta:.1e}, max encoder change {worst_enc:.1e}"),
    );
    assert!(ok);
}

fn random_config(r: &mut impl Rng, vocab: usize) -> ModelConfig {
    let heads = [1, 2, 4][r.random_range(0..3)];
    let mut c = ModelConfig::tiny(vocab);
    c.heads = heads;
    c.d_model = heads * r.random_range(2..=6);
    c.d_ff = r.random_range(4..24);
    c.d_feat = r.random_range(2..10);
    c.d_g = 2 * r.random_range(1..=4);
    c.layers = r.random_range(1..=2);
    c.geometry = r.random_bool(0.8);
    c.log_base = if r.random_bool(0.5) { LogBase::Ten } else { LogBase::Natural };
    c
}

#[test]
fn criterion_4_equivariance_and_causality() {
    let mut r = rng(4);
    let (mut worst_perm, mut causal_exact) = (0.0f64, true);
    for seed in 0..100 {
        let cfg = random_config(&mut r, 9);
        let model = CaptionModel::new(cfg.clone(), seed).unwrap();
        let n = r.random_range(1..=6);
        let det = random_detections(&mut r, n, cfg.d_feat);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let boxes = perm.iter().map(|&i| det.boxes[i]).collect();
        let scores = perm.iter().map(|&i| det.scores[i]).collect();
        let feats: Vec<Vec<f64>> = perm.iter().map(|&i| det.features.row(i).to_vec()).collect();
        let shuffled = DetectionSet::new("perm", boxes, scores, Tensor::from_rows(&feats)).unwrap();
        let (m0, m1) = (model.memory(&det).unwrap(), model.memory(&shuffled).unwrap());
        for (k, &i) in perm.iter().enumerate() {
            for (x, y) in m1.row(k).iter().zip(m0.row(i)) {
                worst_perm = worst_perm.max((x - y).abs());
            }
        }

        let t = r.random_range(2..=8);
        let tokens: Vec<TokenId> = std::iter::once(BOS).chain((1..t).map(|_| r.random_range(2..9))).collect();
        let full = model.logits(&det, &tokens).unwrap();
        let cut = r.random_range(1..t);
        let mut altered = tokens.clone();
        for tok in &mut altered[cut..] {
            *tok = r.random_range(2..9);
        }
        let changed = model.logits(&det, &altered).unwrap();
        let prefix = model.logits(&det, &tokens[..cut]).unwrap();
        for i in 0..cut {
            causal_exact &= full.row(i) == changed.row(i) && full.row(i) == prefix.row(i);
        }
    }
    let ok = worst_perm < 1e-9 && causal_exact;
    report(
        "4",
        "permutation equivariance + causality",
        ok,
        &format!("max permuted-row diff {worst_perm:.1e}, causal prefixes bit-identical {causal_exact}"),
    );
    assert!(ok);
}

/// Synthetic scenes with their first caption only; see the overfit criterion.
fn canonical_corpus(seed: u64, scenes: usize, d_feat: usize) -> (Vec<DetectionSet>, Vec<CaptionLine>) {
    let corpus = synth_corpus(seed, scenes, d_feat).unwrap();
    let caps = corpus
        .iter()
        .map(|(d, c)| CaptionLine {
            image_id: d.image_id.clone(),
            caption: c[0].clone(),
        })
        .collect();
    (corpus.into_iter().map(|(d, _)| d).collect(), caps)
}

#[test]
fn criterion_5_overfit() {
    let start = Instant::now();
    let probe = ModelConfig::tiny(0);
    let (sets, caps) = canonical_corpus(7, 64, probe.d_feat);
    let vocab = Vocabulary::build(caps.iter().map(|c| c.caption.as_str()), 1).unwrap();
    let data = pair_examples(&sets, &caps, &vocab).unwrap();
    let model = CaptionModel::new(ModelConfig::tiny(vocab.len()), 7).unwrap();
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::tiny()
    };
    assert_eq!(cfg.epochs, 300);
    let mut trainer = Trainer::new(model, vocab.clone(), cfg, 7).unwrap();
    let mut first_below = None;
    trainer
        .run_with(&data, &TrainOutputs::default(), |e| {
            if e.mean_loss < 0.1 && first_below.is_none() {
                first_below = Some(e.epoch + 1);
            }
        })
        .unwrap();
    let final_loss = evaluate_loss(trainer.model(), &data).unwrap();
    let exact = sets
        .iter()
        .zip(&caps)
        .filter(|(det, cap)| {
            let ids = greedy_decode(trainer.model(), det, 51).unwrap();
            vocab.decode(&ids).unwrap().join(" ") == cap.caption
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    let ok = final_loss < 0.1 && exact * 10 >= sets.len() * 9 && secs < 600.0;
    report(
        "5",
        "overfit 64 synthetic scenes (tiny)",
        ok,
        &format!(
            "loss < 0.1 from epoch {:?}, final loss {final_loss:.4}, exact {exact}/{}, {secs:.0}s",
            first_below,
            sets.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_bleu_oracle() {
    let mut r = rng(6);
    let mut agree = true;
    for _ in 0..100 {
        let k = r.random_range(1..=5);
        let alphabet = r.random_range(2..=5);
        let mut sent = |lo: usize| -> Vec<u8> { (0..r.random_range(lo..=9)).map(|_| r.random_range(0..alphabet) as u8).collect() };
        let cands: Vec<Vec<u8>> = (0..k).map(|_| sent(0)).collect();
        let refs: Vec<Vec<Vec<u8>>> = (0..k).map(|_| (0..3).map(|_| sent(1)).collect()).collect();
        let refs: Vec<Vec<Vec<u8>>> = refs
            .into_iter()
            .map(|mut rs| {
                rs.truncate(1 + (rs[0].len() % 3));
                rs
            })
            .collect();
        let got = corpus_bleu(&cands, &refs).unwrap();
        let want = bleu_oracle(&cands, &refs);
        agree &= got.matches == want.matches
            && got.totals == want.totals
            && got.candidate_length == want.cand_len
            && got.reference_length == want.ref_len
            && got.brevity_penalty == want.bp
            && got.scores() == want.bleu;
    }
    let hand = corpus_bleu(&[vec!["a", "b", "c"]], &[vec![vec!["a", "b", "c", "d"]]]).unwrap();
    let ok = agree && (hand.bleu_2 - 71.65).abs() <= 0.01;
    report(
        "6",
        "BLEU vs brute force (100 corpora)",
        ok,
        &format!("all fields identical {agree}, hand case BLEU-2 {:.2}", hand.bleu_2),
    );
    assert!(ok);
}

#[test]
fn criterion_7_beam_greedy_exhaustive() {
    let mut r = rng(7);
    let mut width_one = true;
    for seed in 0..100 {
        let vocab = r.random_range(5..12);
        let cfg = random_config(&mut r, vocab);
        let model = CaptionModel::new(cfg.clone(), 1000 + seed).unwrap();
        let n = r.random_range(1..5);
        let det = random_detections(&mut r, n, cfg.d_feat);
        let scorer = ModelScorer::new(&model, &det).unwrap();
        let max_len = r.random_range(1..8);
        width_one &= greedy_search(&scorer, max_len).unwrap() == beam_search(&scorer, 1, max_len, 0.0).unwrap();
    }

    let mut exhaustive = true;
    let mut cases = 0;
    for seed in 0..60 {
        let vocab = r.random_range(3..=5);
        let max_len = r.random_range(1..=3);
        let alpha = [0.0, 0.6, 1.0][seed as usize % 3];
        let wide = 5usize.pow(max_len as u32 + 1);
        // Models need every reserved id plus at least one word.
        let cfg = random_config(&mut r, 5);
        let model = CaptionModel::new(cfg.clone(), 2000 + seed).unwrap();
        let det = random_detections(&mut r, 2, cfg.d_feat);
        let model_scorer = ModelScorer::new(&model, &det).unwrap();
        let hash_scorer = HashScorer { vocab, salt: seed };

        let (want, _) = exhaustive_best(&model_scorer, max_len, alpha);
        exhaustive &= beam_search(&model_scorer, wide, max_len, alpha).unwrap().tokens == want;
        let (want, _) = exhaustive_best(&hash_scorer, max_len, alpha);
        exhaustive &= beam_search(&hash_scorer, wide, max_len, alpha).unwrap().tokens == want;
        cases += 2;
    }
    let ok = width_one && exhaustive;
    report(
        "7",
        "beam=1 ≡ greedy, beam ≡ exhaustive",
        ok,
        &format!("width-1 identical on 100 models {width_one}, exhaustive agreement on {cases} cases {exhaustive}"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_ablation_report() {
    let probe = ModelConfig::tiny(0);
    let train = synth_corpus(80, 128, probe.d_feat).unwrap();
    let held_out = synth_corpus(81, 48, probe.d_feat).unwrap();
    let caps: Vec<CaptionLine> = train
        .iter()
        .flat_map(|(d, cs)| {
            cs.iter().map(|c| CaptionLine {
                image_id: d.image_id.clone(),
                caption: c.clone(),
            })
        })
        .collect();
    let sets: Vec<DetectionSet> = train.iter().map(|(d, _)| d.clone()).collect();
    let vocab = Vocabulary::build(caps.iter().map(|c| c.caption.as_str()), 1).unwrap();
    let data = pair_examples(&sets, &caps, &vocab).unwrap();
    let refs: Vec<Vec<Vec<String>>> = held_out
        .iter()
        .map(|(_, cs)| cs.iter().map(|c| c.split(' ').map(str::to_owned).collect()).collect())
        .collect();

    let mut rows = Vec::new();
    for geometry in [true, false] {
        let cfg = ModelConfig {
            geometry,
            ..ModelConfig::tiny(vocab.len())
        };
        let model = CaptionModel::new(cfg, 11).unwrap();
        let tc = TrainConfig {
            epochs: 60,
            seed: 11,
            ..TrainConfig::tiny()
        };
        let mut trainer = Trainer::new(model, vocab.clone(), tc, 11).unwrap();
        trainer.run(&data, &TrainOutputs::default()).unwrap();
        let cands: Vec<Vec<String>> = held_out
            .iter()
            .map(|(d, _)| vocab.decode(&greedy_decode(trainer.model(), d, 51).unwrap()).unwrap())
            .collect();
        rows.push(corpus_bleu(&cands, &refs).unwrap());
    }
    let table = BleuReport::table(&[("geometry", &rows[0]), ("ablation", &rows[1])]);
    info(
        "8",
        "ablation on held-out synthetic scenes",
        &format!(
            "BLEU-4 geometry {:.1} vs gate disabled {:.1} (expected direction geometry >= ablation)",
            rows[0].bleu_4, rows[1].bleu_4
        ),
    );
    let mut out = std::io::stdout().lock();
    let _ = write!(out, "{table}");
}

#[test]
fn criterion_9_full_scale_note() {
    let full = ModelConfig::paper(10_045);
    let tc = TrainConfig::paper();
    let preset_ok = (full.d_model, full.layers, full.max_objects, full.max_len, tc.epochs, tc.base_lr, tc.lr_decay_gamma, tc.batch_size)
        == (512, 6, 78, 51, 30, 1e-5, 0.95, 8);
    info(
        "9",
        "full-scale BLEU not reproduced",
        &format!(
            "it needs MSCOCO and detector features; `--config paper` full-size preset present: {preset_ok}"
        ),
    );
    assert!(preset_ok);
}
