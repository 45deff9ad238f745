//! Acceptance suite: ten checks spanning metric arithmetic, advantage
//! normalization, KL properties, the reward stack, response parsing, dataset
//! integrity, and end-to-end pipeline determinism. Each check prints one
//! `acceptance NN PASS` line; a failed assertion is the corresponding FAIL.
//!
//! Oracles here are written from scratch, not shared with the crate under
//! test: metric counting is re-derived rule by rule, and the bootstrap is
//! reimplemented directly from its documented draw scheme.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use premise_forge_core::client::{MockBackend, RetryPolicy, TemplateStore};
use premise_forge_core::dataset;
use premise_forge_core::evaluator::{
    classify_response, default_deny_list, evaluate_model, EvaluationConfig,
};
use premise_forge_core::grpo::{
    aggregate_reward, group_advantages, grpo_objective, kl_divergence, kl_estimator_k3, kl_term,
    CandidateGroup, KlInputs,
};
use premise_forge_core::metrics::{
    bootstrap_std, compute_breakdown, compute_metrics, BreakdownConfig, Metric, PredictionRecord,
    Scope, Verdict,
};
use premise_forge_core::pipeline::{
    normalize_premise, GeneratorMetadata, QuestionSample, SampleLabel,
};
use premise_forge_core::rewards::{
    answer_reward, format_reward, total_reward, Completion, JudgeConfig, RewardWeights,
};
use premise_forge_core::rng;
use premise_forge_core::taxonomy::{PremiseLevel, PremiseSubtype};
use rand_core::Rng;
use rand_pcg::Pcg64;

const FP: SampleLabel = SampleLabel::FalsePremise;
const TP: SampleLabel = SampleLabel::TruePremise;

fn pass(number: u32, what: &str) {
    println!("acceptance {number:02} PASS  {what}");
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn forge() -> Command {
    Command::new(env!("CARGO_BIN_EXE_premise-forge"))
}

fn record(
    id: &str,
    gold: SampleLabel,
    predicted: Verdict,
    subtype: PremiseSubtype,
) -> PredictionRecord {
    PredictionRecord {
        sample_id: id.to_owned(),
        gold_label: gold,
        predicted,
        raw_response: "scripted".to_owned(),
        subtype,
    }
}

fn sample(
    id: &str,
    subtype: PremiseSubtype,
    label: SampleLabel,
    original: &str,
    embedded: &str,
    answered: bool,
) -> QuestionSample {
    QuestionSample {
        sample_id: id.to_owned(),
        image_id: format!("img-{id}"),
        level: subtype.level(),
        subtype,
        original_premise: original.to_owned(),
        embedded_premise: embedded.to_owned(),
        question: format!("Given that {embedded}, what else is visible?"),
        label,
        reference_answer: answered.then(|| "A reference answer.".to_owned()),
        generator_metadata: GeneratorMetadata {
            extractor_model: "mock-vlm".into(),
            question_model: "mock-llm".into(),
            template_set: "builtin".into(),
        },
    }
}

// ---------------------------------------------------------------------------
// 1. Metric arithmetic against an independent oracle.
// ---------------------------------------------------------------------------

/// (fpc, fpdp, tpir) as the independent oracle computes them.
type OracleValues = (f64, Option<f64>, Option<f64>);

/// Selects one metric out of an oracle triple, None when undefined.
type MetricPick = dyn Fn(&OracleValues) -> Option<f64>;

/// One-pass tally of every classification outcome; a deliberately separate
/// coding of the metric rules. Unparseable rows count in N only.
fn oracle_metrics(records: &[PredictionRecord]) -> OracleValues {
    let mut correct = 0u32;
    let mut fp_predicted = 0u32;
    let mut fp_hits = 0u32;
    let mut tp_predicted = 0u32;
    let mut tp_hits = 0u32;
    for r in records {
        match (r.predicted, r.gold_label) {
            (Verdict::FalsePremise, SampleLabel::FalsePremise) => {
                fp_predicted += 1;
                fp_hits += 1;
                correct += 1;
            }
            (Verdict::FalsePremise, SampleLabel::TruePremise) => fp_predicted += 1,
            (Verdict::TruePremise, SampleLabel::TruePremise) => {
                tp_predicted += 1;
                tp_hits += 1;
                correct += 1;
            }
            (Verdict::TruePremise, SampleLabel::FalsePremise) => tp_predicted += 1,
            (Verdict::Unparseable, _) => {}
        }
    }
    let ratio = |hits: u32, den: u32| (den > 0).then(|| f64::from(hits) / f64::from(den));
    (
        f64::from(correct) / records.len() as f64,
        ratio(fp_hits, fp_predicted),
        ratio(tp_hits, tp_predicted),
    )
}

/// Bootstrap rebuilt from the documented scheme: resample r draws N indices
/// from `Pcg64::new(seed, r)` as `next_u64() mod N`; the result is the
/// population std over resamples where the metric is defined.
fn oracle_bootstrap(
    records: &[PredictionRecord],
    pick: &MetricPick,
    resamples: u32,
    seed: u64,
) -> Option<(f64, u32)> {
    let n = records.len() as u64;
    let mut values = Vec::new();
    let mut undefined = 0u32;
    for r in 0..resamples {
        let mut gen = Pcg64::new(seed as u128, r as u128);
        let draw: Vec<PredictionRecord> = (0..n)
            .map(|_| records[(gen.next_u64() % n) as usize].clone())
            .collect();
        match pick(&oracle_metrics(&draw)) {
            Some(value) => values.push(value),
            None => undefined += 1,
        }
    }
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    Some((variance.sqrt(), undefined))
}

fn assert_option_close(got: Option<f64>, want: Option<f64>, what: &str, case: usize) {
    match (got, want) {
        (None, None) => {}
        (Some(g), Some(w)) => {
            assert!((g - w).abs() < 1e-12, "case {case}: {what} {g} vs oracle {w}")
        }
        (got, want) => panic!("case {case}: {what} definedness {got:?} vs oracle {want:?}"),
    }
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let started = Instant::now();
    let subtypes = PremiseSubtype::all();
    let mut driver = rng::stream_rng(0xACC1, 0);
    for case in 0..1000 {
        let n = 1 + rng::index(&mut driver, 12);
        let records: Vec<PredictionRecord> = (0..n)
            .map(|i| {
                let gold = if rng::index(&mut driver, 2) == 0 { FP } else { TP };
                let predicted = match rng::index(&mut driver, 3) {
                    0 => Verdict::FalsePremise,
                    1 => Verdict::TruePremise,
                    _ => Verdict::Unparseable,
                };
                let subtype = subtypes[rng::index(&mut driver, subtypes.len())];
                record(&format!("c{case}-{i}"), gold, predicted, subtype)
            })
            .collect();
        let (fpc, fpdp, tpir) = oracle_metrics(&records);
        let values = compute_metrics(&records).expect("non-empty input");
        assert!(
            (values.fpc - fpc).abs() < 1e-12,
            "case {case}: fpc {} vs oracle {fpc}",
            values.fpc
        );
        assert_option_close(values.fpdp, fpdp, "fpdp", case);
        assert_option_close(values.tpir, tpir, "tpir", case);
    }

    // Bootstrap second implementation on a mixed five-row set where some
    // resamples leave each precision undefined.
    let mixed = vec![
        record("b0", FP, Verdict::FalsePremise, PremiseSubtype::Scene),
        record("b1", TP, Verdict::TruePremise, PremiseSubtype::Scene),
        record("b2", FP, Verdict::TruePremise, PremiseSubtype::Scene),
        record("b3", TP, Verdict::FalsePremise, PremiseSubtype::Scene),
        record("b4", FP, Verdict::Unparseable, PremiseSubtype::Scene),
    ];
    let checks: [(Metric, &MetricPick); 3] = [
        (Metric::Fpc, &|m| Some(m.0)),
        (Metric::Fpdp, &|m| m.1),
        (Metric::Tpir, &|m| m.2),
    ];
    for (metric, pick) in checks {
        let (std, undefined) =
            oracle_bootstrap(&mixed, pick, 1000, 17).expect("defined in some resample");
        let estimate = bootstrap_std(&mixed, metric, 1000, 17).expect("valid input");
        assert!(
            (estimate.std - std).abs() < 1e-12,
            "{metric:?}: bootstrap {} vs independent {std}",
            estimate.std
        );
        assert_eq!(estimate.undefined_resamples, undefined, "{metric:?} undefined count");
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "overran: {elapsed:?}");
    pass(
        1,
        &format!(
            "compute_metrics matches the independent oracle on 1000 random sets within 1e-12, \
             bootstrap matches a from-scratch reimplementation within 1e-12 ({elapsed:?})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Hand-worked metric cases.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_hand_worked_metric_cases() {
    // Crossed halves: items 1 and 3 correct; each predicted class holds one
    // matching gold out of two.
    let crossed = vec![
        record("h0", FP, Verdict::FalsePremise, PremiseSubtype::Scene),
        record("h1", FP, Verdict::TruePremise, PremiseSubtype::Scene),
        record("h2", TP, Verdict::TruePremise, PremiseSubtype::Scene),
        record("h3", TP, Verdict::FalsePremise, PremiseSubtype::Scene),
    ];
    let values = compute_metrics(&crossed).unwrap();
    assert_eq!(values.fpc, 0.5);
    assert_eq!(values.fpdp, Some(0.5));
    assert_eq!(values.tpir, Some(0.5));

    // An unparseable row hurts correctness but joins neither precision
    // denominator.
    let with_unparseable = vec![
        record("u0", FP, Verdict::FalsePremise, PremiseSubtype::Scene),
        record("u1", TP, Verdict::Unparseable, PremiseSubtype::Scene),
        record("u2", FP, Verdict::TruePremise, PremiseSubtype::Scene),
    ];
    let values = compute_metrics(&with_unparseable).unwrap();
    assert_eq!(values.fpc, 1.0 / 3.0);
    assert_eq!(values.fpdp, Some(1.0));
    assert_eq!(values.tpir, Some(0.0));

    // Six items, two per level, against hand arithmetic.
    let spec: [(&str, PremiseSubtype, SampleLabel, Verdict); 6] = [
        ("p1", PremiseSubtype::EntityExistence, FP, Verdict::FalsePremise),
        ("p2", PremiseSubtype::VisualAttributes, TP, Verdict::FalsePremise),
        ("c1", PremiseSubtype::Scene, FP, Verdict::TruePremise),
        ("c2", PremiseSubtype::SpatialRelations, TP, Verdict::TruePremise),
        ("r1", PremiseSubtype::LogicalRelations, FP, Verdict::Unparseable),
        ("r2", PremiseSubtype::CommonsenseKnowledge, TP, Verdict::TruePremise),
    ];
    let samples: Vec<QuestionSample> = spec
        .iter()
        .map(|(id, subtype, label, _)| {
            let embedded = if *label == FP { "the lamp is lit" } else { "the lamp is off" };
            sample(id, *subtype, *label, "the lamp is off", embedded, false)
        })
        .collect();
    let predictions: Vec<PredictionRecord> = spec
        .iter()
        .map(|(id, subtype, label, verdict)| record(id, *label, *verdict, *subtype))
        .collect();
    let config = BreakdownConfig { resamples: 0, seed: 17 };
    let reports = compute_breakdown(&predictions, &samples, &config).unwrap();
    let find = |scope: Scope| {
        reports
            .iter()
            .find(|r| r.scope == scope)
            .unwrap_or_else(|| panic!("missing scope {}", scope.name()))
    };

    // Overall: 3 of 6 correct; predicted-FP {p1,p2} holds one FP gold;
    // predicted-TP {c1,c2,r2} holds two TP golds.
    let overall = find(Scope::Overall);
    assert_eq!(overall.n, 6);
    assert_eq!(overall.fpc, 0.5);
    assert_eq!(overall.fpdp, Some(0.5));
    assert_eq!(overall.tpir, Some(2.0 / 3.0));

    // Perceptual: p1 correct, p2 a false alarm; nothing predicted valid.
    let perceptual = find(Scope::Level(PremiseLevel::Perceptual));
    assert_eq!(perceptual.n, 2);
    assert_eq!(perceptual.fpc, 0.5);
    assert_eq!(perceptual.fpdp, Some(0.5));
    assert_eq!(perceptual.tpir, None);

    // Cognitive: c1 a miss, c2 correct; nothing predicted false.
    let cognitive = find(Scope::Level(PremiseLevel::Cognitive));
    assert_eq!(cognitive.n, 2);
    assert_eq!(cognitive.fpc, 0.5);
    assert_eq!(cognitive.fpdp, None);
    assert_eq!(cognitive.tpir, Some(0.5));

    // Reasoning: r1 unparseable, r2 correct.
    let reasoning = find(Scope::Level(PremiseLevel::Reasoning));
    assert_eq!(reasoning.n, 2);
    assert_eq!(reasoning.fpc, 0.5);
    assert_eq!(reasoning.fpdp, None);
    assert_eq!(reasoning.tpir, Some(1.0));

    pass(2, "hand-worked metric cases reproduce exactly: crossed halves, unparseable counting, six-item per-level arithmetic");
}

// ---------------------------------------------------------------------------
// 3. Advantage normalization invariants.
// ---------------------------------------------------------------------------

/// Dyadic grid value in [-2, 2): exact in binary floating point, so sums and
/// scaled deviations of grid rewards round nowhere.
fn grid(k: usize) -> f64 {
    (k as f64 - 2048.0) / 1024.0
}

#[test]
fn criterion_03_advantage_normalization_invariants() {
    let started = Instant::now();
    let mut driver = rng::stream_rng(0xACC3, 0);
    for case in 0..10_000usize {
        let g = 2 + rng::index(&mut driver, 63);
        let mut rewards: Vec<f64> = (0..g).map(|_| grid(rng::index(&mut driver, 4096))).collect();
        if rewards.iter().all(|r| *r == rewards[0]) {
            rewards[0] += 0.5;
        }

        let advantages = group_advantages(&rewards);
        let mean = advantages.iter().sum::<f64>() / g as f64;
        assert!(mean.abs() < 1e-9, "case {case}: advantage mean {mean}");
        let variance =
            advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / g as f64;
        let std = variance.sqrt();
        assert!((std - 1.0).abs() < 1e-6, "case {case}: advantage std {std}");

        // A grid-valued shift keeps every deviation bit-identical, so the
        // advantages must match down to the last bit.
        let shift = grid(rng::index(&mut driver, 4096));
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let shifted_advantages = group_advantages(&shifted);
        for (index, (a, b)) in advantages.iter().zip(&shifted_advantages).enumerate() {
            assert_eq!(
                a.to_bits(),
                b.to_bits(),
                "case {case}: shift {shift} moved advantage {index}: {a} vs {b}"
            );
        }
    }

    for g in [2usize, 3, 17, 64] {
        let advantages = group_advantages(&vec![0.75; g]);
        assert!(
            advantages.iter().all(|a| *a == 0.0),
            "constant group of {g} must map to zeros"
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "overran: {elapsed:?}");
    pass(
        3,
        &format!(
            "10000 random reward groups: |mean| < 1e-9, |std - 1| < 1e-6, bitwise shift \
             invariance, zero-variance guard ({elapsed:?})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Objective composition.
// ---------------------------------------------------------------------------

fn simplex(driver: &mut Pcg64, dims: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dims).map(|_| (rng::index(driver, 50) + 1) as f64).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|x| x / sum).collect()
}

fn logp_draw(driver: &mut Pcg64, len: usize) -> Vec<f64> {
    (0..len).map(|_| -(rng::index(driver, 1001) as f64) / 100.0).collect()
}

#[test]
fn criterion_04_objective_composition() {
    // Identical current and behavior policies: every ratio is exactly 1 and
    // the aggregate collapses to the advantage sum, which vanishes.
    let mut driver = rng::stream_rng(0xACC4, 0);
    for case in 0..1000 {
        let g = 2 + rng::index(&mut driver, 15);
        let rewards: Vec<f64> = (0..g).map(|_| grid(rng::index(&mut driver, 4096))).collect();
        let logp = logp_draw(&mut driver, g);
        let group = CandidateGroup::new(rewards, logp.clone(), logp, KlInputs::Absent)
            .expect("valid group");
        let reward = aggregate_reward(&group);
        assert!(reward.abs() < 1e-9, "case {case}: R {reward} with identical policies");
    }

    // Worked two-candidate group: rewards [0,1] standardize to [-1,1],
    // log-prob gaps [ln2, -ln2] give ratios [2, 0.5], so R = -1.5; both
    // candidates carry KL([.5,.5] || [.25,.75]), so J = -1.5 - 2 KL at
    // beta 2.
    let ln2 = std::f64::consts::LN_2;
    let pairs = vec![(vec![0.5, 0.5], vec![0.25, 0.75]); 2];
    let worked = CandidateGroup::new(
        vec![0.0, 1.0],
        vec![ln2, -ln2],
        vec![0.0, 0.0],
        KlInputs::Exact(pairs),
    )
    .unwrap();
    assert!((aggregate_reward(&worked) - (-1.5)).abs() < 1e-9);
    let objective = grpo_objective(&worked, 2.0).unwrap();
    assert!((objective - (-1.7876)).abs() <= 1e-3, "J {objective}");
    assert!((objective - (-1.7876820724517808)).abs() < 1e-12, "J {objective} drifted");

    // J never increases in beta while the KL term is positive: the worked
    // group plus fifty random groups with exact distribution pairs.
    let betas = [0.0, 0.5, 1.0, 2.0];
    let mut groups = vec![worked];
    for _ in 0..50 {
        let g = 2 + rng::index(&mut driver, 5);
        let dims = 2 + rng::index(&mut driver, 3);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..g)
            .map(|_| (simplex(&mut driver, dims), simplex(&mut driver, dims)))
            .collect();
        let rewards: Vec<f64> = (0..g).map(|_| grid(rng::index(&mut driver, 4096))).collect();
        let logp_current = logp_draw(&mut driver, g);
        let logp_old = logp_draw(&mut driver, g);
        let group =
            CandidateGroup::new(rewards, logp_current, logp_old, KlInputs::Exact(pairs)).unwrap();
        groups.push(group);
    }
    let mut positive_kl = 0;
    for (index, group) in groups.iter().enumerate() {
        let kl = kl_term(group).unwrap().expect("exact pairs present");
        if kl <= 1e-9 {
            continue;
        }
        positive_kl += 1;
        let mut last = f64::INFINITY;
        for beta in betas {
            let objective = grpo_objective(group, beta).unwrap();
            assert!(
                objective <= last + 1e-12,
                "group {index}: J rose from {last} to {objective} at beta {beta}"
            );
            last = objective;
        }
    }
    assert!(positive_kl >= 40, "only {positive_kl} groups had positive KL");

    pass(
        4,
        "identical policies give |R| < 1e-9 on 1000 groups, worked objective lands on \
         -1.7877 within 1e-3, J is non-increasing in beta wherever KL > 0",
    );
}

// ---------------------------------------------------------------------------
// 5. KL properties.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_kl_properties() {
    let mut driver = rng::stream_rng(0xACC5, 0);

    // Exact divergence: non-negative everywhere, zero exactly on identical
    // inputs. Grid-valued simplex draws keep distinct pairs comfortably
    // above the 1e-12 equality band.
    for case in 0..10_000 {
        let dims = 2 + rng::index(&mut driver, 7);
        let p = simplex(&mut driver, dims);
        let q = if case % 10 == 0 { p.clone() } else { simplex(&mut driver, dims) };
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl >= 0.0, "case {case}: KL {kl} negative");
        if q == p {
            assert!(kl < 1e-12, "case {case}: KL {kl} nonzero on identical inputs");
        } else {
            assert!(kl >= 1e-12, "case {case}: KL {kl} vanishes on distinct inputs");
        }
    }

    // Sampled estimate: non-negative for any log-prob pairing because each
    // term is x - ln x - 1 over x > 0.
    for case in 0..10_000 {
        let len = 1 + rng::index(&mut driver, 16);
        let current = logp_draw(&mut driver, len);
        let reference = logp_draw(&mut driver, len);
        let estimate = kl_estimator_k3(&current, &reference).unwrap();
        assert!(estimate >= 0.0, "case {case}: k3 {estimate} negative");
    }

    // Worked values.
    let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    assert!((kl - 0.1438).abs() <= 1e-4, "KL {kl}");
    let recomputed = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - recomputed).abs() < 1e-15, "KL {kl} vs recomputation {recomputed}");

    let ln2 = std::f64::consts::LN_2;
    let k3 = kl_estimator_k3(&[0.0], &[ln2]).unwrap();
    assert!((k3 - 0.3069).abs() <= 1e-4, "k3 {k3}");
    assert!((k3 - (1.0 - ln2)).abs() < 1e-15, "k3 {k3} vs 1 - ln 2");

    pass(
        5,
        "exact KL is non-negative and zero iff inputs match on 10000 simplex pairs, k3 is \
         non-negative on 10000 draws, worked values 0.1438 and 0.3069 reproduce within 1e-4",
    );
}

// ---------------------------------------------------------------------------
// 6. Pipeline end to end under the scripted backend.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_pipeline_end_to_end_deterministic() {
    let demo = demo_dir();
    let manifest = std::fs::read_to_string(demo.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 5, "demo manifest must list five images");

    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("run-a.jsonl");
    let out_b = tmp.path().join("run-b.jsonl");
    let started = Instant::now();
    for out in [&out_a, &out_b] {
        let output = forge()
            .arg("generate")
            .arg("--manifest")
            .arg(demo.join("manifest.tsv"))
            .arg("--config")
            .arg(demo.join("config.toml"))
            .arg("--out")
            .arg(out)
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "generate failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "overran: {elapsed:?}");

    let bytes_a = std::fs::read(&out_a).unwrap();
    let bytes_b = std::fs::read(&out_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "consecutive runs must be byte-identical");
    let committed = std::fs::read(demo.join("dataset.jsonl")).unwrap();
    assert_eq!(bytes_a, committed, "run must reproduce the committed demo dataset");

    let samples = dataset::load(&out_a).unwrap();
    assert!(!samples.is_empty());
    let negatives = samples.iter().filter(|s| s.label == FP).count();
    let positives = samples.iter().filter(|s| s.label == TP).count();
    assert_eq!(negatives, positives, "question polarity must stay balanced");
    for s in &samples {
        if s.label == FP {
            assert_ne!(
                normalize_premise(&s.embedded_premise),
                normalize_premise(&s.original_premise),
                "sample {} embeds an uncorrupted premise",
                s.sample_id
            );
        }
    }

    pass(
        6,
        &format!(
            "five-image scripted run emits {} balanced samples, every negative embeds a \
             corrupted premise, two runs and the committed dataset are byte-identical \
             ({elapsed:?})",
            samples.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Reward stack.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_reward_stack() {
    // Format: canonical layout, order violation, empty block.
    assert_eq!(
        format_reward(&Completion::new("<think>x</think><answer>false premise</answer>")),
        1.0
    );
    assert_eq!(
        format_reward(&Completion::new("<answer>y</answer><think>x</think>")),
        0.0
    );
    assert_eq!(
        format_reward(&Completion::new("<think>x</think><answer></answer>")),
        0.0
    );

    // Answer: verdict match, mismatch, missing block.
    let deny = default_deny_list();
    let matched = Completion::new(
        "<think>t</think><answer>FALSE_PREMISE: the sign means stop, not yield</answer>",
    );
    assert_eq!(answer_reward(&matched, FP, &deny), 1.0);
    let mismatched = Completion::new("<think>t</think><answer>VALID: it is red.</answer>");
    assert_eq!(answer_reward(&mismatched, FP, &deny), 0.0);
    let untagged = Completion::new("false premise, clearly");
    assert_eq!(answer_reward(&untagged, FP, &deny), 0.0);

    // Weighted total through the full stack: judge scores 3 of 5, weights
    // (1, 2, 1), so total = (1 + 2 + 0.6) / 4 = 0.9.
    let judge = MockBackend::new().with_fixture("judge:acc7", "3");
    let templates = TemplateStore::builtin();
    let config = JudgeConfig::new("mock-judge");
    let weights = RewardWeights { format: 1.0, answer: 2.0, reasoning: 1.0 };
    let completion = Completion::new(
        "<think>the sign is octagonal and red, which marks a stop</think>\
         <answer>FALSE_PREMISE: the sign means stop</answer>",
    );
    let breakdown = total_reward(
        &judge,
        &templates,
        &config,
        "acc7",
        "What does the sign mean?",
        FP,
        &completion,
        &deny,
        weights,
    )
    .unwrap();
    assert_eq!(breakdown.format, 1.0);
    assert_eq!(breakdown.answer, 1.0);
    assert!((breakdown.reasoning - 0.6).abs() < 1e-12);
    assert!(!breakdown.reasoning_skipped);
    assert!((breakdown.total - 0.9).abs() < 1e-12, "total {}", breakdown.total);
    assert_eq!(
        breakdown.total,
        weights.combine(breakdown.format, breakdown.answer, breakdown.reasoning),
        "total must be the normalized weighted sum of its own components"
    );

    // Monotonicity of the combination rule in each component over a
    // 10x10x10 grid, for several weightings.
    let steps: Vec<f64> = (0..10).map(|k| k as f64 / 9.0).collect();
    let weightings = [
        RewardWeights::default(),
        weights,
        RewardWeights { format: 0.3, answer: 2.5, reasoning: 1.2 },
    ];
    for w in weightings {
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let here = w.combine(steps[i], steps[j], steps[k]);
                    assert!((0.0..=1.0).contains(&here), "total {here} outside [0,1]");
                    if i + 1 < 10 {
                        assert!(w.combine(steps[i + 1], steps[j], steps[k]) >= here);
                    }
                    if j + 1 < 10 {
                        assert!(w.combine(steps[i], steps[j + 1], steps[k]) >= here);
                    }
                    if k + 1 < 10 {
                        assert!(w.combine(steps[i], steps[j], steps[k + 1]) >= here);
                    }
                }
            }
        }
    }

    pass(
        7,
        "format and answer cases pass, the weighted total lands on 0.9, and the total is \
         monotone in every component over a 10x10x10 grid",
    );
}

// ---------------------------------------------------------------------------
// 8. Response parsing table and evaluator determinism.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_classifier_table_and_evaluator_determinism() {
    let deny = default_deny_list();
    // Twenty rows spanning all four rules in precedence order: structured
    // verdict token, deny-list scan, substantive fallback, unparseable.
    let table: [(&str, Verdict); 20] = [
        ("<answer>FALSE_PREMISE: the clock is analog</answer>", Verdict::FalsePremise),
        ("<think>hmm</think><answer>false_premise</answer>", Verdict::FalsePremise),
        (
            "  <answer>  False_Premise, because the bench is wooden</answer>",
            Verdict::FalsePremise,
        ),
        ("<answer>VALID: three mugs are visible</answer>", Verdict::TruePremise),
        ("<answer>valid</answer>", Verdict::TruePremise),
        // The structured token wins over a deny phrase later in the block.
        (
            "<answer>VALID even though someone may call it a false premise</answer>",
            Verdict::TruePremise,
        ),
        ("The question contains a false premise.", Verdict::FalsePremise),
        ("That rests on an INCORRECT PREMISE about the scene.", Verdict::FalsePremise),
        ("Actually the premise is wrong here.", Verdict::FalsePremise),
        ("Such a lamp does not exist in the image.", Verdict::FalsePremise),
        // A block without a leading token falls through to the deny scan.
        ("<answer>I think this is a false premise</answer>", Verdict::FalsePremise),
        ("The mug sits on the table.", Verdict::TruePremise),
        ("there are three birds", Verdict::TruePremise),
        ("je ne sais pas vraiment", Verdict::TruePremise),
        ("", Verdict::Unparseable),
        ("   \n\t", Verdict::Unparseable),
        ("ok", Verdict::Unparseable),
        ("two words", Verdict::Unparseable),
        // Unclosed tag: no block, no phrase, one whitespace word.
        ("<answer>FALSE_PREMISE", Verdict::Unparseable),
        ("yes", Verdict::Unparseable),
    ];
    for (row, (text, want)) in table.iter().enumerate() {
        let got = classify_response(text, &deny);
        assert_eq!(got, *want, "row {row}: {text:?} classified {got:?}, expected {want:?}");
    }

    // Determinism: identical fixture set and dataset give identical
    // predictions run to run and across concurrency levels, with a scripted
    // failure isolated to its own row.
    let subtypes = PremiseSubtype::all();
    let samples: Vec<QuestionSample> = (0..8)
        .map(|i| {
            let label = if i % 2 == 0 { FP } else { TP };
            let original = format!("the marker number {i} is blue");
            let embedded = if label == FP {
                format!("the marker number {i} is green")
            } else {
                original.clone()
            };
            sample(&format!("e{i}"), subtypes[i], label, &original, &embedded, false)
        })
        .collect();
    let mut backend = MockBackend::new()
        .with_failure("evaluate:e3", "connection reset by peer");
    for (i, reply) in [
        "<answer>FALSE_PREMISE: it is green</answer>",
        "<answer>VALID: as stated</answer>",
        "This question contains a false premise.",
        "",
        "The marker is clearly visible here.",
        "no",
        "<answer>FALSE_PREMISE</answer>",
        "<answer>VALID</answer>",
    ]
    .iter()
    .enumerate()
    {
        if i != 3 {
            backend = backend.with_fixture(&format!("evaluate:e{i}"), reply);
        }
    }
    let templates = TemplateStore::builtin();
    let config = EvaluationConfig {
        retry: RetryPolicy::none(),
        ..EvaluationConfig::new("mock-candidate")
    };
    let first = evaluate_model(&backend, &samples, None, &templates, &config).unwrap();
    let second = evaluate_model(&backend, &samples, None, &templates, &config).unwrap();
    assert_eq!(first, second, "same inputs must yield identical predictions");
    let serial = evaluate_model(
        &backend,
        &samples,
        None,
        &templates,
        &EvaluationConfig { concurrency: 1, ..config },
    )
    .unwrap();
    assert_eq!(first, serial, "concurrency must not change results");
    let ids: Vec<&str> = first.iter().map(|r| r.sample_id.as_str()).collect();
    assert_eq!(ids, ["e0", "e1", "e2", "e3", "e4", "e5", "e6", "e7"], "order follows the dataset");
    assert_eq!(first[3].predicted, Verdict::Unparseable);
    assert!(first[3].raw_response.contains("connection reset by peer"));

    pass(
        8,
        "twenty-row classification table covers all four rules, evaluation is identical run \
         to run and across concurrency levels",
    );
}

// ---------------------------------------------------------------------------
// 9. Report shape.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_markdown_report_shape() {
    let demo = demo_dir();
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let markdown_path = tmp.path().join("report.md");
    let output = forge()
        .arg("score")
        .arg("--predictions")
        .arg(demo.join("predictions.jsonl"))
        .arg("--dataset")
        .arg(demo.join("dataset.jsonl"))
        .arg("--out")
        .arg(&report)
        .arg("--markdown")
        .arg(&markdown_path)
        .arg("--model-name")
        .arg("demo-candidate")
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "score failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(stdout.lines().last().expect("summary line")).unwrap();
    assert_eq!(summary["command"], "score");

    let markdown = std::fs::read_to_string(&markdown_path).unwrap();
    for level in ["Perceptual", "Cognitive", "Reasoning"] {
        for metric in ["FPC", "FPDP", "TPIR"] {
            let column = format!("{level} {metric}");
            assert!(markdown.contains(&column), "missing column {column}");
        }
    }
    assert!(markdown.contains("| Model | N | FPC | FPDP | TPIR |"));
    assert!(markdown.contains("| demo-candidate |"));

    // Every uncertainty cell renders as percent with one decimal, a plus or
    // minus sign, and a two-decimal spread, the "75.9" and "0.04" shape.
    let cells: Vec<&str> = markdown
        .split(['|', '\n'])
        .map(str::trim)
        .filter(|cell| cell.contains('\u{b1}'))
        .collect();
    assert!(!cells.is_empty(), "report carries no uncertainty cells");
    for cell in cells {
        let (value, spread) = cell.split_once('\u{b1}').unwrap();
        let fraction_digits = |s: &str| s.split_once('.').map(|(_, f)| f.len());
        assert_eq!(fraction_digits(value), Some(1), "value shape in {cell:?}");
        assert_eq!(fraction_digits(spread), Some(2), "spread shape in {cell:?}");
        value.parse::<f64>().unwrap_or_else(|_| panic!("value in {cell:?}"));
        spread.parse::<f64>().unwrap_or_else(|_| panic!("spread in {cell:?}"));
    }

    pass(
        9,
        "markdown report renders FPC/FPDP/TPIR per level plus overall and subtype tables, \
         uncertainty cells match the one-decimal percent, two-decimal spread shape",
    );
}

// ---------------------------------------------------------------------------
// 10. Dataset round-trip and corruption detection.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_dataset_round_trip_and_corruption() {
    const NOUNS: [&str; 8] =
        ["sign", "mug", "bench", "kite", "awning", "ladder", "mural", "caf\u{e9} board"];
    const TRAITS: [&str; 8] =
        ["red", "wooden", "striped", "tilted", "antique", "circular", "cracked", "gleaming"];
    let subtypes = PremiseSubtype::all();
    let mut driver = rng::stream_rng(0xACC0, 10);
    let samples: Vec<QuestionSample> = (0..1000)
        .map(|i| {
            let subtype = subtypes[rng::index(&mut driver, subtypes.len())];
            let label = if rng::index(&mut driver, 2) == 0 { FP } else { TP };
            let noun = NOUNS[rng::index(&mut driver, NOUNS.len())];
            let first = rng::index(&mut driver, TRAITS.len());
            let second = (first + 1 + rng::index(&mut driver, TRAITS.len() - 1)) % TRAITS.len();
            let original = format!("the {noun} is {}", TRAITS[first]);
            let embedded = if label == FP {
                format!("the {noun} is {}", TRAITS[second])
            } else {
                original.clone()
            };
            let answered = rng::index(&mut driver, 2) == 0;
            sample(&format!("rt-{i:04}"), subtype, label, &original, &embedded, answered)
        })
        .collect();

    let mut bytes = Vec::new();
    dataset::save(&samples, &mut bytes).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    let loaded = dataset::load_str(&text).unwrap();
    assert_eq!(loaded, samples, "load(save(x)) must be the identity");
    let mut again = Vec::new();
    dataset::save(&loaded, &mut again).unwrap();
    assert_eq!(again, bytes, "re-serialization must be byte-stable");

    // Twelve corrupted lines interleaved with three valid ones; every
    // corruption must surface with its exact line number.
    let valid = |id: &str| {
        sample(id, PremiseSubtype::Scene, TP, "the room is tidy", "the room is tidy", false)
    };
    let value_of = |s: &QuestionSample| serde_json::to_value(s).unwrap();
    let line_of = |v: &serde_json::Value| serde_json::to_string(v).unwrap();

    let missing_field = {
        let mut v = value_of(&valid("bad-missing"));
        v.as_object_mut().unwrap().remove("question");
        line_of(&v)
    };
    let unknown_field = {
        let mut v = value_of(&valid("bad-surplus"));
        v.as_object_mut().unwrap().insert("surplus".into(), serde_json::json!(true));
        line_of(&v)
    };
    let blank_id = {
        let mut v = value_of(&valid("bad-blank-id"));
        v["sample_id"] = serde_json::json!("   ");
        line_of(&v)
    };
    let level_mismatch = {
        let mut v = value_of(&valid("bad-level"));
        v["level"] = serde_json::json!("reasoning");
        line_of(&v)
    };
    let uncorrupted_negative = {
        // Case and punctuation changes normalize away, so the premise pair
        // is identical and the negative label is a lie.
        let mut s = sample(
            "bad-uncorrupted",
            PremiseSubtype::Scene,
            FP,
            "the lamp is lit",
            "the lamp is lit",
            false,
        );
        s.embedded_premise = "The Lamp  Is Lit.".into();
        line_of(&value_of(&s))
    };
    let altered_positive = {
        let mut s = valid("bad-altered");
        s.embedded_premise = "the room is spotless".into();
        line_of(&value_of(&s))
    };
    let bad_label = {
        let mut v = value_of(&valid("bad-label"));
        v["label"] = serde_json::json!("perhaps");
        line_of(&v)
    };
    let duplicate_id = {
        let mut v = value_of(&valid("ok-1"));
        v["image_id"] = serde_json::json!("img-elsewhere");
        line_of(&v)
    };
    let nonstring_question = {
        let mut v = value_of(&valid("bad-nonstring"));
        v["question"] = serde_json::json!(7);
        line_of(&v)
    };

    let lines = [
        line_of(&value_of(&valid("ok-1"))),      // 1
        "not valid json {{{".to_owned(),         // 2
        line_of(&value_of(&valid("ok-2"))),      // 3
        "[\"a\",\"list\"]".to_owned(),           // 4
        missing_field,                            // 5
        unknown_field,                            // 6
        blank_id,                                 // 7
        level_mismatch,                           // 8
        uncorrupted_negative,                     // 9
        altered_positive,                         // 10
        bad_label,                                // 11
        duplicate_id,                             // 12
        String::new(),                            // 13
        nonstring_question,                       // 14
        line_of(&value_of(&valid("ok-3"))),      // 15
    ];
    let corpus = lines.join("\n") + "\n";
    let error = dataset::load_str(&corpus).unwrap_err();
    let dataset::DatasetError::Invalid(failures) = error else {
        panic!("expected a line-failure report, got: {error}");
    };
    let got: Vec<(usize, String)> = failures
        .iter()
        .map(|failure| match failure {
            dataset::LineFailure::Parse { line, .. } => (*line, "parse".to_owned()),
            dataset::LineFailure::Invariant { line, field, .. } => (*line, field.clone()),
        })
        .collect();
    let want: Vec<(usize, String)> = [
        (2, "parse"),
        (4, "parse"),
        (5, "question"),
        (6, "surplus"),
        (7, "sample_id"),
        (8, "level"),
        (9, "embedded_premise"),
        (10, "embedded_premise"),
        (11, "label"),
        (12, "sample_id"),
        (13, "parse"),
        (14, "question"),
    ]
    .into_iter()
    .map(|(line, what)| (line, what.to_owned()))
    .collect();
    assert_eq!(got, want, "corruption report disagrees on lines or fields");

    pass(
        10,
        "1000-sample round-trip is the identity with stable bytes, all twelve corruptions \
         surface with exact line numbers",
    );
}
