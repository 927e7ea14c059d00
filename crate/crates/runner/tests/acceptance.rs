//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines always
//! reach the output. Exits non-zero when any criterion fails, except that a
//! missed directional threshold in criteria 8 and 9 is reported as FAIL
//! without failing the run unless `ACCEPTANCE_STRICT=1`. Their structural
//! checks (training completes, reports are well-formed, backbone untouched)
//! always count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use ptdebias::checkpoint::{backbone_digest, save_backbone};
use ptdebias::config::{BackboneSpec, ExperimentConfig};
use ptdebias::experiment::{load_encoder, run_training, swap_backbone, TrainingRun};
use ptdebias::io::{read_activities, read_lines, write_nli_corpus, write_stsb_corpus};
use ptdebias::report::BiasReport;
use ptdebias_core::benchmark::{gen_bias_nli, gen_bias_stsb, Activity, ArticleRule, BiasNliGenerator, BiasNliInstance, Gender};
use ptdebias_core::encoder::{build_encoder, BackboneSource, EncoderConfig};
use ptdebias_core::gradcheck::check_prompt_gradients;
use ptdebias_core::head::trainable_parameters;
use ptdebias_core::lexicon::{augment_corpus, counterfactual_sentence, BiasLexicon};
use ptdebias_core::metrics::{
    bios_bias, correlation, nli_bias, stsb_bias, BiosPrediction, NliPrediction, ScoredStsbUnit,
    DEFAULT_NLI_THRESHOLDS, DEFAULT_STSB_THRESHOLDS,
};
use ptdebias_core::objectives::{contrastive_loss, ContrastiveBatch};
use ptdebias_core::toy::{generate_toy_task, ToyTaskConfig};
use ptdebias_core::train::{train, Method, Model, TrainConfig, TrainData};

type Verdict = Result<String, String>;

/// `Ok((property_holds, detail))`; `Err` for structural failures.
type Directional = Result<(bool, String), String>;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        PropConfig {
            cases,
            failure_persistence: None,
            ..PropConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. augmentation

fn involution_sentence() -> impl Strategy<Value = String> {
    let lex = BiasLexicon::default_gender();
    let mut words: Vec<String> = lex.involutive_terms().into_iter().map(String::from).collect();
    words.extend(
        ["the", "walked", "to", "a", "park", "quickly", "and", "nurse", "blue", "yesterday", "manager"]
            .map(String::from),
    );
    let word = (prop::sample::select(words), 0..3u8).prop_map(|(w, casing)| match casing {
        0 => w,
        1 => {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        }
        _ => w.to_uppercase(),
    });
    let sep = prop::sample::select(vec![" ", ", ", " - ", "'s ", "; "]);
    (prop::collection::vec((word, sep), 1..16), prop::sample::select(vec![".", "!", "?", ""])).prop_map(
        |(parts, end)| {
            let mut s = String::new();
            for (i, (w, sep)) in parts.iter().enumerate() {
                if i > 0 {
                    s.push_str(sep);
                }
                s.push_str(w);
            }
            s.push_str(end);
            s
        },
    )
}

fn criterion_1() -> Verdict {
    let data = manifest_dir().join("tests/data");
    let corpus = std::fs::read_to_string(data.join("augment_corpus.txt")).map_err(err)?;
    let expected = std::fs::read_to_string(data.join("augment_expected.txt")).map_err(err)?;
    let lex = BiasLexicon::default_gender();
    let (corpus, expected): (Vec<&str>, Vec<&str>) = (corpus.lines().collect(), expected.lines().collect());
    ensure(corpus.len() == 50 && expected.len() == 50, "corpus and expected file must have 50 lines")?;
    for (i, (s, e)) in corpus.iter().zip(&expected).enumerate() {
        let got = counterfactual_sentence(s, &lex).unwrap_or_else(|| s.to_string());
        ensure(got == *e, format!("line {}: got {got:?}, expected {e:?}", i + 1))?;
    }
    let start = Instant::now();
    runner(1000)
        .run(&involution_sentence(), |s| {
            let once = counterfactual_sentence(&s, &lex).unwrap_or_else(|| s.clone());
            let twice = counterfactual_sentence(&once, &lex).unwrap_or_else(|| once.clone());
            prop_assert_eq!(&twice, &s);
            Ok(())
        })
        .map_err(err)?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), format!("property test took {took:?}"))?;
    Ok(format!("50/50 sentences match, 1000 involution cases in {took:.2?}"))
}

// 2. contrastive oracle

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn oracle_loss(p: &[f64], h: &[Vec<f64>], hp: &[Vec<f64>], tau: f64) -> f64 {
    let cat = |v: &[f64]| p.iter().chain(v).copied().collect::<Vec<f64>>();
    let mut total = 0.0;
    for i in 0..h.len() {
        let anchor = cat(&h[i]);
        let positive = (cosine(&anchor, &cat(&hp[i])) / tau).exp();
        let mut denom = 0.0;
        for other in hp {
            denom += (cosine(&anchor, &cat(other)) / tau).exp();
        }
        total += -(positive / denom).ln();
    }
    total / h.len() as f64
}

fn contrastive_case() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    (1usize..=8, 1usize..=16, prop::sample::select(vec![0.005, 0.05, 0.5])).prop_flat_map(|(n, d, tau)| {
        let v = move || prop::collection::vec(-1.0f64..1.0, d);
        (
            v(),
            prop::collection::vec(v(), n),
            prop::collection::vec(v(), n),
            Just(tau),
        )
    })
}

fn criterion_2() -> Verdict {
    let worst = std::cell::Cell::new(0.0f64);
    runner(200)
        .run(&contrastive_case(), |(p, h, hp, tau)| {
            let batch = ContrastiveBatch::new(p.clone(), h.clone(), hp.clone(), tau).unwrap();
            let got = contrastive_loss(&batch).unwrap();
            let want = oracle_loss(&p, &h, &hp, tau);
            let diff = (got - want).abs();
            worst.set(worst.get().max(diff));
            prop_assert!(diff < 1e-6, "loss {} vs oracle {}", got, want);
            Ok(())
        })
        .map_err(err)?;
    let single = ContrastiveBatch::new(vec![0.3, -0.2], vec![vec![1.0, 2.0]], vec![vec![-0.5, 0.7]], 0.05).map_err(err)?;
    let n1 = contrastive_loss(&single).map_err(err)?;
    ensure(n1 == 0.0, format!("N=1 loss is {n1}, expected exactly 0"))?;
    Ok(format!("200 batches, max |loss - oracle| = {:.2e}, N=1 gives 0", worst.get()))
}

// 3. gradient check

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let handle = build_encoder(BackboneSource::Toy {
        config: EncoderConfig::toy(2, 32, 4),
        seed: 0,
    })
    .map_err(err)?;
    let task = generate_toy_task(&ToyTaskConfig {
        train_size: 64,
        dev_size: 8,
        ..ToyTaskConfig::default()
    });
    let train_set = augment_corpus(&task.train, &BiasLexicon::default_gender());
    let mut batch: Vec<_> = train_set.iter().filter(|e| e.has_attribute()).take(4).cloned().collect();
    batch.extend(train_set.iter().filter(|e| !e.has_attribute()).take(2).cloned());
    let cfg = TrainConfig {
        method: Method::Co2pt,
        alpha: 1.0,
        temperature: 0.05,
        prompt_length: 4,
        max_len: 24,
        ..TrainConfig::default()
    };
    let model = Model::init(&handle, &cfg, Some(2.5));
    let g = check_prompt_gradients(&handle, &model, &cfg, &batch, &[], 1e-3).map_err(err)?;
    let took = start.elapsed();
    ensure(g.checked == 2 * 2 * 4 * 32, format!("checked {} entries", g.checked))?;
    ensure(g.max_rel_error < 1e-4, format!("max relative error {:.2e} at {:?} (analytic {:e}, numeric {:e})", g.max_rel_error, g.worst, g.analytic, g.numeric))?;
    ensure(took < Duration::from_secs(120), format!("took {took:?}"))?;
    Ok(format!(
        "{} prompt entries, max relative error {:.2e}, {took:.1?}",
        g.checked, g.max_rel_error
    ))
}

// 4. frozen backbone

fn criterion_4() -> Verdict {
    let (layers, hidden, prompt_length) = (2, 32, 8);
    let handle = build_encoder(BackboneSource::Toy {
        config: EncoderConfig::toy(layers, hidden, 4),
        seed: 0,
    })
    .map_err(err)?;
    let before = backbone_digest(handle.backbone());
    let snapshot = handle.backbone().clone();
    let task = generate_toy_task(&ToyTaskConfig::default());
    let train_set = augment_corpus(&task.train, &BiasLexicon::default_gender());
    let cfg = TrainConfig {
        prompt_length,
        epochs: 10,
        max_len: 32,
        max_steps: Some(100),
        ..TrainConfig::default()
    };
    let out = train(
        &handle,
        &cfg,
        TrainData {
            train: &train_set,
            dev: &task.dev,
            auxiliary: &[],
        },
        |_| Ok(None),
    )
    .map_err(err)?;
    ensure(out.steps == 100, format!("ran {} steps", out.steps))?;
    let after = backbone_digest(handle.backbone());
    ensure(before == after && handle.backbone() == &snapshot, "backbone digest changed")?;
    let census = trainable_parameters(&handle, &out.model.prompt, &out.model.head);
    let expected = layers * 2 * prompt_length * hidden;
    ensure(census.prompt == expected, format!("prompt count {} != {expected}", census.prompt))?;
    ensure(census.backbone_trainable == 0, "backbone has trainable parameters")?;
    Ok(format!(
        "100 steps, digest {} unchanged, prompt parameters {} = {layers}x2x{prompt_length}x{hidden}",
        &after[..12],
        census.prompt
    ))
}

// 5. metric oracles

fn oracle_stsb(units: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = units.len() as f64;
    let diffs: Vec<f64> = units.iter().map(|(m, f)| (m - f).abs()).collect();
    (
        diffs.iter().sum::<f64>() / n,
        diffs.iter().filter(|&&d| d > 0.1).count() as f64 / n,
        diffs.iter().filter(|&&d| d > 0.3).count() as f64 / n,
    )
}

fn oracle_nli(probs: &[[f64; 3]]) -> (f64, f64, f64, f64) {
    let n = probs.len() as f64;
    let mut nn = 0.0;
    let mut fnn = 0.0;
    let mut t5 = 0.0;
    let mut t7 = 0.0;
    for p in probs {
        nn += p[1];
        // argmax with ties to the lowest index
        let neutral_wins = p[1] > p[0] && p[1] >= p[2];
        if neutral_wins {
            fnn += 1.0;
        }
        if p[1] > 0.5 {
            t5 += 1.0;
        }
        if p[1] > 0.7 {
            t7 += 1.0;
        }
    }
    (nn / n, fnn / n, t5 / n, t7 / n)
}

fn oracle_bios(rows: &[(usize, usize, bool)]) -> (f64, f64, f64) {
    let mut hits = [0.0; 2];
    let mut totals = [0.0; 2];
    let mut per: BTreeMap<usize, [[f64; 2]; 2]> = BTreeMap::new();
    for &(pred, gold, female) in rows {
        let g = female as usize;
        let hit = (pred == gold) as u8 as f64;
        hits[g] += hit;
        totals[g] += 1.0;
        let e = per.entry(gold).or_default();
        e[g][0] += hit;
        e[g][1] += 1.0;
    }
    let gap_tpr = (hits[0] / totals[0] - hits[1] / totals[1]).abs() * 100.0;
    let gaps: Vec<f64> = per
        .values()
        .filter(|e| e[0][1] > 0.0 && e[1][1] > 0.0)
        .map(|e| e[0][0] / e[0][1] - e[1][0] / e[1][1])
        .collect();
    let rms = if gaps.is_empty() {
        0.0
    } else {
        (gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt()
    };
    let acc = (hits[0] + hits[1]) / rows.len() as f64;
    (gap_tpr, rms, acc)
}

fn bios_rows(rows: &[(usize, usize, bool)]) -> Vec<BiosPrediction> {
    rows.iter()
        .map(|&(p, g, female)| BiosPrediction {
            predicted_profession: format!("job{p}"),
            gold_profession: format!("job{g}"),
            gender: if female { Gender::Female } else { Gender::Male },
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn criterion_5() -> Verdict {
    let mut r = runner(100);
    r.run(&prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..=100), |units| {
        let scored: Vec<ScoredStsbUnit> = units
            .iter()
            .enumerate()
            .map(|(i, &(m, f))| ScoredStsbUnit {
                unit_id: i,
                score_male: m,
                score_female: f,
            })
            .collect();
        let got = stsb_bias(&scored, &DEFAULT_STSB_THRESHOLDS).unwrap();
        let (avg, f1, f3) = oracle_stsb(&units);
        prop_assert!(close(got.avg_abs_diff, avg) && close(got.frac_gt[0].fraction, f1) && close(got.frac_gt[1].fraction, f3));
        Ok(())
    })
    .map_err(|e| format!("stsb_bias: {e}"))?;
    let probs = prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..=100).prop_map(|v| {
        v.into_iter()
            .map(|(a, b, c)| {
                let s = a + b + c + 1e-12;
                [a / s, b / s, c / s]
            })
            .collect::<Vec<_>>()
    });
    r.run(&probs, |probs| {
        let preds: Vec<NliPrediction> = probs.iter().map(|&p| NliPrediction::from_probs(p)).collect();
        let got = nli_bias(&preds, &DEFAULT_NLI_THRESHOLDS).unwrap();
        let (nn, fnn, t5, t7) = oracle_nli(&probs);
        prop_assert!(close(got.net_neutral, nn) && close(got.fraction_neutral, fnn));
        prop_assert!(close(got.threshold[0].fraction, t5) && close(got.threshold[1].fraction, t7));
        Ok(())
    })
    .map_err(|e| format!("nli_bias: {e}"))?;
    let rows = prop::collection::vec((0usize..5, 0usize..5, any::<bool>()), 2..=100).prop_map(|mut v| {
        v[0].2 = false;
        v[1].2 = true;
        v
    });
    r.run(&rows, |rows| {
        let got = bios_bias(&bios_rows(&rows)).unwrap();
        let (tpr, rms, acc) = oracle_bios(&rows);
        prop_assert!(close(got.gap_tpr, tpr) && close(got.gap_rms, rms) && close(got.accuracy, acc));
        Ok(())
    })
    .map_err(|e| format!("bios_bias: {e}"))?;

    // worked examples
    let u = |m, f| ScoredStsbUnit {
        unit_id: 0,
        score_male: m,
        score_female: f,
    };
    let s = stsb_bias(&[u(1.2, 1.0), u(2.0, 2.4)], &DEFAULT_STSB_THRESHOLDS).map_err(err)?;
    ensure(
        close(s.avg_abs_diff, 0.3) && s.frac_gt[0].fraction == 1.0 && s.frac_gt[1].fraction == 0.5,
        format!("stsb example: {s:?}"),
    )?;
    let s = stsb_bias(&[u(1.0, 1.05)], &DEFAULT_STSB_THRESHOLDS).map_err(err)?;
    ensure(close(s.avg_abs_diff, 0.05) && s.frac_gt[0].fraction == 0.0, "stsb single-unit example")?;
    let n = nli_bias(
        &[NliPrediction::from_probs([0.2, 0.6, 0.2]), NliPrediction::from_probs([0.5, 0.3, 0.2])],
        &DEFAULT_NLI_THRESHOLDS,
    )
    .map_err(err)?;
    ensure(
        close(n.net_neutral, 0.45) && n.fraction_neutral == 0.5 && n.threshold[0].fraction == 0.5 && n.threshold[1].fraction == 0.0,
        format!("nli example: {n:?}"),
    )?;
    let third = 1.0 / 3.0;
    let n = nli_bias(&[NliPrediction::from_probs([third; 3])], &DEFAULT_NLI_THRESHOLDS).map_err(err)?;
    ensure(close(n.net_neutral, third) && n.fraction_neutral == 0.0, "nli uniform example")?;
    // two occupations with gaps 0.3 and 0.4
    let mut rows = Vec::new();
    for (occ, male_hits, female_hits) in [(0, 8, 5), (1, 9, 5)] {
        for i in 0..10 {
            rows.push((if i < male_hits { occ } else { 9 }, occ, false));
            rows.push((if i < female_hits { occ } else { 9 }, occ, true));
        }
    }
    let b = bios_bias(&bios_rows(&rows)).map_err(err)?;
    ensure(close(b.gap_rms, ((0.09f64 + 0.16) / 2.0).sqrt()), format!("gap_rms {}", b.gap_rms))?;
    ensure((b.gap_rms - 0.35355).abs() < 1e-5, "gap_rms example")?;
    // gender A 3/4 correct, gender B 1/2 correct
    let rows = [
        (0, 0, false),
        (1, 1, false),
        (2, 2, false),
        (0, 1, false),
        (0, 0, true),
        (0, 1, true),
    ];
    let b = bios_bias(&bios_rows(&rows)).map_err(err)?;
    ensure(close(b.gap_tpr, 25.0), format!("gap_tpr {}", b.gap_tpr))?;
    let golds = [1.0, 2.0, 3.0, 4.0, 5.0];
    let c = correlation(&golds, &golds).map_err(err)?;
    ensure(close(c.pearson, 1.0) && close(c.spearman, 1.0), "correlation identity example")?;
    let cubed: Vec<f64> = golds.iter().map(|g: &f64| g.powi(3)).collect();
    let c = correlation(&cubed, &golds).map_err(err)?;
    ensure(close(c.spearman, 1.0) && c.pearson < 1.0, "rank invariance example")?;
    Ok("300 randomized oracle comparisons within 1e-9, worked examples reproduce (gap_rms 0.35355, gap_tpr 25)".into())
}

// 6. generator count laws

fn nli_corpus(
    gender_words: &[String],
    occupations: &[String],
    activities: &[Activity],
    rule: &ArticleRule,
) -> Result<Vec<BiasNliInstance>, String> {
    let words: Vec<&str> = gender_words.iter().map(String::as_str).collect();
    let occs: Vec<&str> = occupations.iter().map(String::as_str).collect();
    gen_bias_nli(&words, &occs, activities, rule).map_err(err)
}

fn criterion_6() -> Verdict {
    let demo = manifest_dir().join("data/demo");
    let templates = read_lines(&demo.join("stsb_templates.txt")).map_err(err)?;
    let professions = read_lines(&demo.join("professions.txt")).map_err(err)?;
    let gender_words = read_lines(&demo.join("gender_words.txt")).map_err(err)?;
    let occupations = read_lines(&demo.join("occupations.txt")).map_err(err)?;
    let activities = read_activities(&demo.join("activities.txt")).map_err(err)?;
    let rule = ptdebias::io::load_article_rule(Some(&demo.join("article_exceptions.txt"))).map_err(err)?;

    let units = gen_bias_stsb(&templates, &professions, ("man", "woman")).map_err(err)?;
    ensure(
        units.len() == templates.len() * professions.len(),
        format!("{} stsb units", units.len()),
    )?;
    let nli = nli_corpus(&gender_words, &occupations, &activities, &rule)?;
    let triple = gender_words.len() * occupations.len() * activities.len();
    ensure(nli.len() == triple, format!("{} nli instances, expected {triple}", nli.len()))?;

    let dir = tempfile::tempdir().map_err(err)?;
    let write_both = |i: usize| -> Result<(Vec<u8>, Vec<u8>), String> {
        let (s, n) = (dir.path().join(format!("stsb{i}.tsv")), dir.path().join(format!("nli{i}.tsv")));
        let units = gen_bias_stsb(&templates, &professions, ("man", "woman")).map_err(err)?;
        write_stsb_corpus(&s, &units).map_err(err)?;
        let nli = nli_corpus(&gender_words, &occupations, &activities, &rule)?;
        write_nli_corpus(&n, nli).map_err(err)?;
        Ok((std::fs::read(s).map_err(err)?, std::fs::read(n).map_err(err)?))
    };
    ensure(write_both(0)? == write_both(1)?, "repeated generation is not byte-identical")?;
    let mut detail = format!(
        "stsb {}x{}={}, nli {}x{}x{}={}, byte-identical reruns",
        templates.len(),
        professions.len(),
        units.len(),
        gender_words.len(),
        occupations.len(),
        activities.len(),
        nli.len()
    );
    detail.push_str(&upstream_counts()?);
    Ok(detail)
}

/// Exact corpus sizes, checked only when the official lists are supplied
/// through `PTDEBIAS_UPSTREAM_LISTS`.
fn upstream_counts() -> Result<String, String> {
    let Some(dir) = std::env::var_os("PTDEBIAS_UPSTREAM_LISTS").map(PathBuf::from) else {
        return Ok("; upstream exact counts skipped (PTDEBIAS_UPSTREAM_LISTS unset)".into());
    };
    let lines = |f: &str| read_lines(&dir.join(f)).map_err(err);
    let templates = lines("stsb_templates.txt")?;
    let professions = lines("professions.txt")?;
    let stsb = gen_bias_stsb(&templates, &professions, ("man", "woman")).map_err(err)?.len();
    ensure(stsb == 16_980, format!("upstream stsb count {stsb} != 16980"))?;
    let gender_words = lines("gender_words.txt")?;
    let occupations = lines("occupations.txt")?;
    let activities = read_activities(&dir.join("activities.txt")).map_err(err)?;
    let nli = BiasNliGenerator::new(gender_words, occupations, activities, ArticleRule::new())
        .map_err(err)?
        .len();
    ensure(nli == 1_936_512, format!("upstream nli count {nli} != 1936512"))?;
    Ok("; upstream counts 16980 and 1936512 reproduced".into())
}

// 7. alpha reduction

fn tensor_files(run: &TrainingRun) -> Result<Vec<Vec<u8>>, String> {
    ["prompt.safetensors", "head.safetensors"]
        .iter()
        .map(|f| std::fs::read(run.checkpoints[0].join(f)).map_err(err))
        .collect()
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = ExperimentConfig {
        prompt_length: 8,
        epochs: 1,
        max_len: 32,
        seeds: vec![0],
        output_dir: Some(dir.path().to_path_buf()),
        ..ExperimentConfig::default()
    };
    cfg.method = Method::Pt;
    let pt = run_training(&cfg).map_err(err)?;
    cfg.method = Method::Co2pt;
    cfg.alpha = 0.0;
    let co = run_training(&cfg).map_err(err)?;
    ensure(tensor_files(&pt)? == tensor_files(&co)?, "checkpoint tensors differ")?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("prompt and head tensor files byte-identical, {took:.1?}"))
}

// 8 and 9. directional experiment

struct Direction {
    pt_diff: f64,
    co_diff: f64,
    pt_dev: f64,
    co_dev: f64,
}

impl Direction {
    fn reduction(&self) -> f64 {
        1.0 - self.co_diff / self.pt_diff
    }

    fn dev_drop(&self) -> f64 {
        self.pt_dev - self.co_dev
    }

    fn holds(&self) -> bool {
        self.reduction() >= 0.30 && self.dev_drop() <= 0.05
    }

    fn describe(&self) -> String {
        format!(
            "avg_abs_diff pt {:.4} -> co2pt {:.4} ({:+.1}%), dev spearman pt {:.4} -> co2pt {:.4} (drop {:.4})",
            self.pt_diff,
            self.co_diff,
            -100.0 * self.reduction(),
            self.pt_dev,
            self.co_dev,
            self.dev_drop()
        )
    }
}

fn toy_config(out: &Path) -> Result<ExperimentConfig, String> {
    let path = manifest_dir().join("../../configs/toy.toml");
    let mut cfg = ExperimentConfig::load(&path).map_err(err)?;
    cfg.output_dir = Some(out.to_path_buf());
    Ok(cfg)
}

fn well_formed(r: &BiasReport, seeds: usize) -> Result<(), String> {
    ensure(r.seeds.len() == seeds, format!("{} seed entries", r.seeds.len()))?;
    ensure(r.backbone.digest_before == r.backbone.digest_after, "backbone digest changed")?;
    for key in ["avg_abs_diff", "frac>0.1", "frac>0.3"] {
        let mean = r.seeds.iter().map(|s| s.bias[key]).sum::<f64>() / seeds as f64;
        ensure((r.mean_bias[key] - mean).abs() < 1e-12, format!("mean of {key}"))?;
    }
    for key in ["pearson", "spearman", "dev_spearman"] {
        ensure(r.mean_task.get(key).is_some_and(|v| v.is_finite()), format!("missing {key}"))?;
    }
    ensure(r.seeds.iter().all(|s| !s.series.is_empty()), "empty epoch series")
}

fn direction(cfg: &ExperimentConfig) -> Result<(Direction, BiasReport), String> {
    let co = run_training(cfg).map_err(err)?.report;
    let mut pt_cfg = cfg.clone();
    pt_cfg.method = Method::Pt;
    let pt = run_training(&pt_cfg).map_err(err)?.report;
    well_formed(&co, cfg.seeds.len())?;
    well_formed(&pt, cfg.seeds.len())?;
    let d = Direction {
        pt_diff: pt.mean_bias["avg_abs_diff"],
        co_diff: co.mean_bias["avg_abs_diff"],
        pt_dev: pt.mean_task["dev_spearman"],
        co_dev: co.mean_task["dev_spearman"],
    };
    Ok((d, co))
}

fn criterion_8() -> Directional {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = toy_config(dir.path())?;
    ensure(cfg.seeds.len() == 3, "the toy config must list 3 seeds")?;
    let (d, _) = direction(&cfg)?;
    Ok((d.holds(), format!("{}, {:.0?}", d.describe(), start.elapsed())))
}

fn criterion_9() -> Directional {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let base = toy_config(dir.path())?;
    let BackboneSpec::Toy { layers, hidden, heads, seed } = base.backbone.clone() else {
        return Err("the toy config must use a toy backbone".into());
    };
    let second = load_encoder(&BackboneSpec::Toy {
        layers,
        hidden,
        heads,
        seed: seed + 1,
    })
    .map_err(err)?;
    let export = dir.path().join("second-backbone");
    save_backbone(&export, &second).map_err(err)?;
    let cfg = swap_backbone(&base, &export).map_err(err)?;
    let (d, report) = direction(&cfg)?;
    ensure(report.backbone.digest_before == backbone_digest(second.backbone()), "report names the wrong backbone")?;
    Ok((
        d.holds(),
        format!("swapped backbone report well-formed; {}, {:.0?}", d.describe(), start.elapsed()),
    ))
}

fn strict(run: fn() -> Verdict) -> Directional {
    run().map(|detail| (true, detail))
}

fn main() {
    let criteria: [(&str, fn() -> Directional, bool); 9] = [
        ("augmentation correctness", || strict(criterion_1), false),
        ("contrastive loss oracle", || strict(criterion_2), false),
        ("prompt gradient check", || strict(criterion_3), false),
        ("frozen backbone audit", || strict(criterion_4), false),
        ("metric oracles", || strict(criterion_5), false),
        ("generator count laws", || strict(criterion_6), false),
        ("alpha reduction", || strict(criterion_7), false),
        ("directional debiasing", criterion_8, true),
        ("backbone swap", criterion_9, true),
    ];
    let strict_mode = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut shortfalls = Vec::new();
    for (i, (name, run, directional)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok((true, detail)) => println!("criterion {id} ({name}): PASS: {detail}"),
            Ok((false, detail)) => {
                println!("criterion {id} ({name}): FAIL: {detail}");
                if *directional && !strict_mode {
                    shortfalls.push(id);
                } else {
                    failed.push(id);
                }
            }
            Err(detail) => {
                println!("criterion {id} ({name}): FAIL: {detail}");
                failed.push(id);
            }
        }
    }
    if !shortfalls.is_empty() {
        println!("directional thresholds missed in criteria {shortfalls:?}; not fatal unless ACCEPTANCE_STRICT=1");
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
