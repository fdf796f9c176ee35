//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report reads top to bottom.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scirel::augment::{generate, AugmentConfig, EntityPair};
use scirel::config::Config;
use scirel::corpus::{Document, RelationInstance, RelationKind};
use scirel::ensemble::{average, blend_all, combine, rnn_weight};
use scirel::eval::{classification_report, prf};
use scirel::features::{build_vocab, EmbeddingTable, EncodedExample, Encoder, POS_VOCAB_SIZE};
use scirel::model::gradcheck::check_gradients;
use scirel::model::{
    class_weights, Arch, ClassWeights, Classifier, CnnConfig, EmbeddingConfig, InputSizes, ProbDist, RnnConfig,
};
use scirel::ngram_lm::{train_lm, NGramModel, BOS};
use scirel::pipeline::{evaluate, predict, prepare, train, Architecture, Subtask};
use scirel::postprocess::{preference_order, resolve_conflicts, Candidate};
use scirel::preprocess::{apply_reversal, crop_and_tag, LabelScheme, ProcessedExample, ENTITY_MARKER};
use scirel::synthetic;
use scirel::training::{accuracy, init_model, lr_schedule, smoothed_class_weights, upsample, ModelSpec, TrainOptions, Trainer};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // written so a NaN comparison fails the check
        if !matches!($cond, true) {
            return Err(format!($($fmt)+));
        }
    };
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn c1_formulas() -> Result<String, String> {
    // N / (K n_c) evaluated by hand: 755 / 1238 and 755 / 272
    let w = class_weights(&[619, 136]).map_err(|e| e.to_string())?;
    let expect = [0.609_854_604_200_323_1, 2.775_735_294_117_647];
    for (a, b) in w.0.iter().zip(expect) {
        ensure!((a - b).abs() <= 1e-9, "class weight {a} vs {b}");
    }
    let ends = [
        rnn_weight(0, 0, 40).unwrap(),
        rnn_weight(20, 0, 40).unwrap(),
        rnn_weight(40, 0, 40).unwrap(),
    ];
    ensure!(ends == [0.25, 0.5, 0.75], "rnn_weight endpoints {ends:?}");
    let lr = lr_schedule(0.01, 3, 1);
    ensure!(lr == 0.00125, "lr_schedule(0.01, 3, 1) = {lr}");
    Ok(format!("weights {:.5}/{:.5}, blend 0.25/0.5/0.75, lr {lr}", w.0[0], w.0[1]))
}

fn gradcheck_model(arch: Arch) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let emb = EmbeddingConfig {
        word_dim: 5,
        pos_dim: 3,
        relpos_dim: 2,
        fine_tune_words: true,
    };
    let cnn = CnnConfig {
        // every default width, so filters wider than the sentence are covered
        filter_widths: vec![2, 3, 4, 5, 6, 7],
        filters_per_width: 2,
        ..CnnConfig::default()
    };
    let rnn = RnnConfig {
        lstm_units: 4,
        ..RnnConfig::default()
    };
    let mut words = EmbeddingTable::random(9, emb.word_dim, &mut rng);
    words.matrix.mapv_inplace(|v| v * 8.0);
    let sizes = InputSizes {
        vocab: 9,
        pos: POS_VOCAB_SIZE,
        relpos: 61,
        classes: 6,
    };
    Classifier::new(arch, &emb, &cnn, &rnn, words, sizes, &mut rng)
}

fn c2_gradients() -> Result<String, String> {
    let ex = EncodedExample {
        word_ids: vec![2, 5, 7, 2, 8],
        pos_ids: vec![36, 11, 27, 36, 14],
        relpos1_ids: vec![30, 31, 32, 33, 34],
        relpos2_ids: vec![26, 27, 28, 29, 30],
        label: Some(3),
        length: 5,
    };
    let weights = ClassWeights(vec![0.8, 1.3, 1.0, 2.1, 0.6, 1.7]);
    let mut worst: f64 = 0.0;
    let mut groups = 0;
    for arch in [Arch::Cnn, Arch::Rnn] {
        let model = gradcheck_model(arch);
        let checks = check_gradients(&model, &[&ex], &weights, 1e-5, 1e-6).map_err(|e| e.to_string())?;
        for c in &checks {
            ensure!(c.max_rel_error <= 1e-4, "{arch} {}: relative error {:e}", c.name, c.max_rel_error);
            worst = worst.max(c.max_rel_error);
        }
        groups += checks.len();
    }
    Ok(format!("{groups} parameter groups, worst relative error {worst:.1e}"))
}

fn c3_overfit() -> Result<String, String> {
    let examples = synthetic::classification_fixture(20, 3, 4);
    let enc = Encoder {
        vocab: build_vocab(&examples, 1),
        relpos_clip: 30,
        scheme: LabelScheme::Six,
        fallback_pos: true,
    };
    let data: Vec<EncodedExample> = examples.iter().map(|e| enc.encode(e).unwrap()).collect();
    let sizes = InputSizes {
        vocab: enc.vocab.len(),
        pos: POS_VOCAB_SIZE,
        relpos: enc.relpos_vocab_size(),
        classes: 3,
    };
    let mut summary = Vec::new();
    for arch in [Arch::Cnn, Arch::Rnn] {
        let spec = ModelSpec {
            arch,
            embedding: EmbeddingConfig::default(),
            cnn: CnnConfig::default(),
            rnn: RnnConfig::default(),
        };
        let words = EmbeddingTable::random(sizes.vocab, spec.embedding.word_dim, &mut ChaCha8Rng::seed_from_u64(3));
        let model = init_model(&spec, words, sizes, 1);
        let options = TrainOptions {
            seed: 1,
            ..TrainOptions::default()
        };
        let weights = smoothed_class_weights(&data, 3);
        let mut t = Trainer::new(model, &data, weights, options, true).map_err(|e| e.to_string())?;
        let initial = accuracy(t.model(), &data);
        let mut acc = initial;
        while t.epoch() < 200 && acc < 0.95 {
            t.run_epoch().map_err(|e| e.to_string())?;
            acc = accuracy(t.model(), &data);
        }
        ensure!(acc >= 0.95, "{arch} reached only {acc} after 200 epochs");
        summary.push(format!(
            "{arch} {:.0}% -> {:.0}% at epoch {}",
            100.0 * initial,
            100.0 * acc,
            t.epoch()
        ));
    }
    Ok(summary.join(", "))
}

fn random_example(rng: &mut impl Rng, i: usize) -> (Document, RelationInstance) {
    let vocab = ["model", "data", "uses", "the", "of", "parser", "text", "a", "corpus", "for"];
    let n = rng.random_range(2..30);
    let tokens: Vec<String> = (0..n).map(|_| vocab.choose(rng).unwrap().to_string()).collect();
    let a0 = rng.random_range(0..n - 1);
    let a1 = rng.random_range(a0..n - 1);
    let b0 = rng.random_range(a1 + 1..n);
    let b1 = rng.random_range(b0..n);
    let id = format!("R{i}");
    let doc = Document::new(
        id.clone(),
        tokens,
        vec![
            scirel::corpus::Entity::new(format!("{id}.1"), a0, a1),
            scirel::corpus::Entity::new(format!("{id}.2"), b0, b1),
        ],
    );
    let kind = *RelationKind::ALL[..5].choose(rng).unwrap();
    let inst = RelationInstance::labeled(&id, &format!("{id}.1"), &format!("{id}.2"), kind, rng.random_bool(0.5));
    (doc, inst)
}

fn c4_preprocessing() -> Result<String, String> {
    let doc = Document::from_text("P", "our corpus consists of independent text .", &[("P.1", 1, 1), ("P.2", 5, 5)]);
    let inst = RelationInstance::labeled("P", "P.1", "P.2", RelationKind::PartWhole, true);
    let ex = crop_and_tag(&doc, &inst).map_err(|e| e.to_string())?;
    ensure!(ex.tokens == words("<e> corpus <e> consists of independent <e> text <e>"), "crop {:?}", ex.tokens);
    let r = apply_reversal(&ex);
    ensure!(
        r.tokens == words("<e> text <e> independent of consists <e> corpus <e>"),
        "reversal {:?}",
        r.tokens
    );

    let template_doc = Document::from_text(
        "T",
        "methods involve the use of probabilistic generative models",
        &[("T.1", 0, 0), ("T.2", 6, 7)],
    );
    let template = crop_and_tag(
        &template_doc,
        &RelationInstance::labeled("T", "T.1", "T.2", RelationKind::Usage, false),
    )
    .unwrap();
    let test_doc = Document::from_text("U", "predictive performance of our models", &[("U.1", 0, 1), ("U.2", 4, 4)]);
    let test = crop_and_tag(&test_doc, &RelationInstance::unlabeled("U", "U.1", "U.2")).unwrap();
    let corpus = ["the use of probabilistic models", "predictive performance of models"];
    let lm = train_lm(corpus.iter().map(|s| s.split(' ').collect::<Vec<_>>()), 3).map_err(|e| e.to_string())?;
    let config = AugmentConfig {
        threshold: f64::NEG_INFINITY,
        ..AugmentConfig::default()
    };
    let out = generate(&[template], &[EntityPair::from_example(&test)], &lm, &config, 0);
    let want = "<e> predictive performance <e> involve the use of probabilistic <e> models <e>";
    ensure!(out.len() == 1 && out[0].tagged_sentence() == want, "generated {:?}", out.first().map(ProcessedExample::tagged_sentence));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let (doc, inst) = random_example(&mut rng, i);
        let ex = crop_and_tag(&doc, &inst).map_err(|e| e.to_string())?;
        let markers = |e: &ProcessedExample| e.tokens.iter().filter(|t| *t == ENTITY_MARKER).count();
        ensure!(markers(&ex) == 4, "example {i}: {} markers", markers(&ex));
        let r = apply_reversal(&ex);
        ensure!(markers(&r) == 4, "example {i}: {} markers after reversal", markers(&r));
        ensure!(apply_reversal(&r) == ex, "example {i}: reversal is not an involution");
        if inst.reverse {
            ensure!(r.tokens.iter().rev().eq(ex.tokens.iter()), "example {i}: not a word-level reversal");
        } else {
            ensure!(r == ex, "example {i}: unreversed example changed");
        }
    }
    Ok("crop/reversal and generated sample exact; 1000 random examples hold".into())
}

fn c5_language_model() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
    let mut sentences = Vec::new();
    let mut total = 0;
    while total < 10_000 {
        let n = rng.random_range(4..20);
        // skewed draws so some n-grams repeat often
        let s: Vec<String> = (0..n)
            .map(|_| {
                let r: f64 = rng.random();
                vocab[((r * r * r) * vocab.len() as f64) as usize].clone()
            })
            .collect();
        total += s.len();
        sentences.push(s);
    }
    let lm = train_lm(&sentences, 3).map_err(|e| e.to_string())?;
    let predictable: Vec<String> = lm.predictable_words().map(String::from).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pick = |rng: &mut ChaCha8Rng| match rng.random_range(0..10) {
            0 => BOS.to_owned(),
            1 => "never-seen".to_owned(),
            _ => vocab[rng.random_range(0..40)].clone(),
        };
        let ctx = [pick(&mut rng), pick(&mut rng)];
        let ctx: Vec<&str> = if ctx[1] == BOS { vec![BOS] } else { ctx.iter().map(String::as_str).collect() };
        let sum: f64 = predictable.iter().map(|w| lm.prob(&ctx, w)).sum();
        worst = worst.max((sum - 1.0).abs());
        ensure!((sum - 1.0).abs() <= 1e-6, "context {ctx:?} sums to {sum}");
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("lm.txt");
    lm.save(&path).map_err(|e| e.to_string())?;
    let back = NGramModel::load(&path).map_err(|e| e.to_string())?;
    ensure!(back == lm, "reloaded model differs");
    for s in sentences.iter().take(200) {
        let (a, b) = (lm.log_prob(s), back.log_prob(s));
        ensure!(a.to_bits() == b.to_bits(), "log_prob {a} vs {b} after reload");
    }
    Ok(format!("{total} tokens, worst |sum - 1| = {worst:.1e}, reload bit-exact"))
}

/// Greedy acceptance over a preference order equals the conflict-free
/// subset that is lexicographically largest in that order.
fn brute_force(cands: &[Candidate], order: &[usize]) -> Vec<usize> {
    let n = cands.len();
    let ents = |c: &Candidate| [(c.instance.doc_id.clone(), c.instance.e1.clone()), (c.instance.doc_id.clone(), c.instance.e2.clone())];
    let mut best: Option<Vec<bool>> = None;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut seen = HashSet::new();
        if !chosen.iter().all(|&i| ents(&cands[i]).into_iter().all(|e| seen.insert(e))) {
            continue;
        }
        let key: Vec<bool> = order.iter().map(|&i| mask & (1 << i) != 0).collect();
        if best.as_ref().is_none_or(|b| key > *b) {
            best = Some(key);
        }
    }
    let best = best.expect("the empty set is conflict-free");
    let mut picked: Vec<usize> = order.iter().zip(best).filter_map(|(&i, k)| k.then_some(i)).collect();
    picked.sort_unstable();
    picked
}

fn c6_resolver() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids = ["D.1", "D.2", "D.3", "D.4", "D.5"];
    for trial in 0..1000 {
        let n = rng.random_range(0..=8);
        let mut cands = Vec::new();
        for _ in 0..n {
            let a = rng.random_range(0..ids.len() - 1);
            let b = rng.random_range(a + 1..ids.len());
            cands.push(Candidate {
                instance: RelationInstance::unlabeled("D", ids[a], ids[b]),
                class: rng.random_range(0..4),
                probability: rng.random(),
                length: rng.random_range(0..4),
            });
        }
        let freq: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let negative = rng.random_bool(0.5).then_some(3);
        let seed = rng.random();
        let out = resolve_conflicts(&cands, &freq, negative, seed);
        let mut used = HashSet::new();
        for c in &out {
            ensure!(
                used.insert(c.instance.e1.clone()) && used.insert(c.instance.e2.clone()),
                "trial {trial}: entity used twice"
            );
            ensure!(Some(c.class) != negative, "trial {trial}: negative class kept");
        }
        let positive: Vec<Candidate> = cands.iter().filter(|c| Some(c.class) != negative).cloned().collect();
        let order = preference_order(&positive, &freq, seed);
        for w in order.windows(2) {
            let key = |c: &Candidate| (c.length, std::cmp::Reverse(freq[c.class]));
            ensure!(key(&positive[w[0]]) <= key(&positive[w[1]]), "trial {trial}: order violates preference keys");
        }
        let expect: Vec<Candidate> = brute_force(&positive, &order).into_iter().map(|i| positive[i].clone()).collect();
        ensure!(out == expect, "trial {trial}: greedy {out:?} vs brute force {expect:?}");
    }
    Ok("1000 trials match brute force, no entity reused".into())
}

struct Oracle {
    p: Vec<f64>,
    r: Vec<f64>,
    f: Vec<f64>,
    macro_f1: f64,
    micro: (f64, f64, f64),
}

fn oracle(gold: &[usize], pred: &[usize], k: usize) -> Oracle {
    let mut m = vec![vec![0usize; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        m[g][p] += 1;
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let hm = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let row = |c: usize| m[c].iter().sum::<usize>();
    let col = |c: usize| (0..k).map(|g| m[g][c]).sum::<usize>();
    let p: Vec<f64> = (0..k).map(|c| div(m[c][c], col(c))).collect();
    let r: Vec<f64> = (0..k).map(|c| div(m[c][c], row(c))).collect();
    let f: Vec<f64> = (0..k).map(|c| hm(p[c], r[c])).collect();
    let present: Vec<usize> = (0..k).filter(|&c| row(c) > 0).collect();
    let macro_f1 = present.iter().map(|&c| f[c]).sum::<f64>() / present.len() as f64;
    let diag: usize = (0..k).map(|c| m[c][c]).sum();
    let mp = div(diag, gold.len());
    Oracle {
        p,
        r,
        f,
        macro_f1,
        micro: (mp, mp, hm(mp, mp)),
    }
}

fn c7_scorer() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..500 {
        let k = rng.random_range(2..8);
        let n = rng.random_range(1..80);
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = gold
            .iter()
            .map(|&g| if rng.random_bool(0.6) { g } else { rng.random_range(0..k) })
            .collect();
        let m = prf(&gold, &pred, None).map_err(|e| e.to_string())?;
        let o = oracle(&gold, &pred, k);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        for (&c, s) in &m.per_class {
            ensure!(
                close(s.precision, o.p[c]) && close(s.recall, o.r[c]) && close(s.f1, o.f[c]),
                "set {set} class {c}: {s:?} vs ({}, {}, {})",
                o.p[c],
                o.r[c],
                o.f[c]
            );
        }
        ensure!(close(m.macro_f1, o.macro_f1), "set {set}: macro F1 {} vs {}", m.macro_f1, o.macro_f1);
        let (mp, mr, mf) = o.micro;
        ensure!(
            close(m.micro.precision, mp) && close(m.micro.recall, mr) && close(m.micro.f1, mf),
            "set {set}: micro {:?} vs {:?}",
            m.micro,
            o.micro
        );
    }
    let gold = synthetic::corpus(30, 7).map_err(|e| e.to_string())?;
    let pred: Vec<RelationInstance> = gold
        .instances()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut p = r.clone();
            if i % 4 == 0 {
                p.kind = Some(RelationKind::ALL[(i / 4) % 6]);
                p.reverse = false;
            }
            p
        })
        .collect();
    let report = classification_report(gold.instances(), &pred).to_human();
    for needle in ["Relation type", "PART-WHOLE", "Micro-averaged total", "Macro-averaged total"] {
        ensure!(report.contains(needle), "report lacks {needle}:\n{report}");
    }
    for line in report.lines() {
        println!("    | {line}");
    }
    Ok("500 random sets match the confusion-matrix oracle; report above".into())
}

fn random_dist(rng: &mut impl Rng, k: usize) -> ProbDist {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    ProbDist::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
}

fn c8_ensemble() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cnn = Vec::new();
    let mut rnn = Vec::new();
    let mut lengths = Vec::new();
    for i in 0..1000 {
        let k = rng.random_range(2..13);
        let p = random_dist(&mut rng, k);
        let reps = rng.random_range(1..21);
        let avg = average(&vec![p.clone(); reps]).map_err(|e| e.to_string())?;
        for (a, b) in avg.as_slice().iter().zip(p.as_slice()) {
            ensure!((a - b).abs() <= 1e-9, "dist {i}: averaging {reps} copies moved {b} to {a}");
        }
        let others: Vec<ProbDist> = (0..rng.random_range(1..6)).map(|_| random_dist(&mut rng, k)).collect();
        let mean = average(&others).map_err(|e| e.to_string())?;
        ensure!((mean.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9, "dist {i}: mean not normalized");
        let q = random_dist(&mut rng, k);
        let w: f64 = rng.random();
        let b = combine(&p, &q, w).map_err(|e| e.to_string())?;
        ensure!((b.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9, "dist {i}: blend not normalized");
        for ((&x, &c), &r) in b.as_slice().iter().zip(p.as_slice()).zip(q.as_slice()) {
            ensure!(x >= c.min(r) - 1e-9 && x <= c.max(r) + 1e-9, "dist {i}: blend leaves the segment");
            ensure!((x - (w * r + (1.0 - w) * c)).abs() <= 1e-9, "dist {i}: blend is not convex");
        }
        if k == 6 {
            cnn.push(p);
            rnn.push(q);
            lengths.push(rng.random_range(0..25));
        }
    }
    let all = blend_all(&cnn, &rnn, &lengths).map_err(|e| e.to_string())?;
    for p in &all {
        ensure!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9, "blend_all output not normalized");
    }
    Ok(format!("1000 distributions; blend_all over {} six-class pairs", all.len()))
}

fn smoke_config() -> Config {
    let mut c = Config::default();
    c.embedding.word_dim = 16;
    c.embedding.pos_dim = 5;
    c.embedding.relpos_dim = 4;
    c.cnn.filter_widths = vec![2, 3, 4];
    c.cnn.filters_per_width = 8;
    c.rnn.lstm_units = 8;
    c.training.ensemble_size = 4;
    c.training.subtask1.epochs = 8;
    c.training.subtask2.epochs = 3;
    c.training.batch_size = 32;
    c.workers = 2;
    c
}

fn c9_smoke() -> Result<String, String> {
    let data = synthetic::corpus(50, 9).map_err(|e| e.to_string())?;
    let cfg = smoke_config();
    let mut scores = Vec::new();
    for subtask in [Subtask::Classification, Subtask::Extraction] {
        let run = || -> Result<_, String> {
            let model = train(&cfg, subtask, Architecture::Ensemble, &data).map_err(|e| e.to_string())?;
            let pred = predict(&model, &data).map_err(|e| e.to_string())?;
            let gold = prepare(&data).map_err(|e| e.to_string())?;
            Ok((pred.relations.clone(), evaluate(subtask, gold.instances(), &pred.relations)))
        };
        let (p1, r1) = run()?;
        let (p2, r2) = run()?;
        ensure!(p1 == p2, "subtask {subtask}: predictions differ between runs");
        ensure!(r1 == r2, "subtask {subtask}: metrics differ between runs");
        scores.push(format!("subtask {subtask} macro-F1 {:.3}", r1.metrics.macro_f1));
    }
    let ex = |label| EncodedExample {
        word_ids: vec![0],
        pos_ids: vec![0],
        relpos1_ids: vec![0],
        relpos2_ids: vec![0],
        label: Some(label),
        length: 1,
    };
    let data: Vec<EncodedExample> = (0..20).map(|_| ex(0)).chain((0..820).map(|_| ex(11))).collect();
    let up = upsample(&data, 1.0, 11, 0).map_err(|e| e.to_string())?;
    let pos = up.iter().filter(|e| e.label == Some(0)).count();
    let neg = up.len() - pos;
    ensure!((pos, neg) == (820, 820), "upsampling gave {pos}/{neg}");
    scores.push(format!("upsampled {pos}/{neg}"));
    Ok(scores.join(", "))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("formula exactness", c1_formulas),
        ("gradient correctness", c2_gradients),
        ("overfit sanity", c3_overfit),
        ("preprocessing golden tests", c4_preprocessing),
        ("LM normalization", c5_language_model),
        ("conflict resolver", c6_resolver),
        ("scorer oracle", c7_scorer),
        ("ensemble properties", c8_ensemble),
        ("end-to-end smoke", c9_smoke),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
