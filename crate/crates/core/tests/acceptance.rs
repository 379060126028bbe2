//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured evidence. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

use oswatch::data::{
    encode_osef, read_embeddings, synth_openset, write_embeddings, ClassLabel, Dataset,
    EmbeddingRecord, FileFormat, LabelGroup, SynthConfig,
};
use oswatch::gallery::{
    classify, enroll, score_probes, Decision, Extractor, ProbeFeature, ScoreMatrix, ScoreRow,
};
use oswatch::losses::{
    entropic_loss, max_entropy_loss, objectosphere_loss, softmax, LossSpec, LossVariant,
};
use oswatch::metrics::{fpir, magnitude_histogram, oroc_curve, tpir, tpir_at_fpir};
use oswatch::net::{
    backward, decode_model, encode_model, forward, load_model, param_count_formula, save_model,
    AdapterParams,
};
use oswatch::rng::Rng;
use oswatch::trainer::{train, TrainConfig};
use std::time::Instant;

// ---------------------------------------------------------------------------
// helpers

fn random_input(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_in(-2.0, 2.0)).collect()
}

fn random_logits(rng: &mut Rng, c: usize, scale: f64) -> Vec<f64> {
    (0..c).map(|_| rng.uniform_in(-scale, scale)).collect()
}

struct ParamView;

impl ParamView {
    fn get(p: &AdapterParams, flat: usize) -> f64 {
        let blocks: [&Vec<f64>; 6] = [&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3];
        let mut k = flat;
        for b in blocks {
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        unreachable!("flat index out of range")
    }

    fn set(p: &mut AdapterParams, flat: usize, v: f64) {
        let blocks: [&mut Vec<f64>; 6] = [
            &mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2, &mut p.w3, &mut p.b3,
        ];
        let mut k = flat;
        for b in blocks {
            if k < b.len() {
                b[k] = v;
                return;
            }
            k -= b.len();
        }
        unreachable!("flat index out of range")
    }

    fn grad(g: &oswatch::net::ParamGrads, flat: usize) -> f64 {
        let blocks = g.blocks();
        let mut k = flat;
        for b in blocks {
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        unreachable!("flat index out of range")
    }
}

fn end_to_end_loss(params: &AdapterParams, x: &[f64], label: ClassLabel, spec: &LossSpec) -> f64 {
    let t = forward(params, x);
    spec.evaluate(&t.logits, &t.h2, label).value
}

fn known_only(ds: &Dataset) -> Dataset {
    Dataset::new(
        ds.dim,
        ds.records.iter().filter(|r| r.label.is_known()).cloned().collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness for all five loss variants

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let (d, h1, h2, c) = (8usize, 16usize, 8usize, 5usize);
    let step = 1e-4;
    let mut checked = 0usize;

    for variant in LossVariant::ALL {
        let spec = LossSpec::new(variant);
        let num_known = match variant {
            LossVariant::Garbage => c - 1,
            _ => c,
        };
        let mut config_seed = 0u64;
        let mut configs_done = 0usize;
        while configs_done < 20 {
            config_seed += 1;
            let seed = variant.tag() as u64 * 1000 + config_seed;
            let mut params = AdapterParams::init(seed, d, h1, h2, c);
            let mut rng = Rng::with_stream(seed, 77);
            let x = random_input(&mut rng, d);
            let label = match variant {
                LossVariant::SoftMax => ClassLabel::Known(rng.range(num_known as u64) as u32),
                _ => {
                    if rng.range(2) == 0 {
                        ClassLabel::Known(rng.range(num_known as u64) as u32)
                    } else {
                        ClassLabel::Negative
                    }
                }
            };
            // Central differences assume differentiability: skip the rare
            // draw whose known-sample feature norm sits on the magnitude
            // penalty's kink.
            if variant == LossVariant::Objectosphere && label.is_known() {
                let norm = forward(&params, &x).h2.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - spec.xi).abs() < 1e-3 {
                    continue;
                }
            }
            configs_done += 1;

            let trace = forward(&params, &x);
            let out = spec.evaluate(&trace.logits, &trace.h2, label);
            let analytic = backward(&params, &trace, &out.grad_logits, &out.grad_h2);
            let total = params.param_count();
            for flat in 0..total {
                let original = ParamView::get(&params, flat);
                ParamView::set(&mut params, flat, original + step);
                let plus = end_to_end_loss(&params, &x, label, &spec);
                ParamView::set(&mut params, flat, original - step);
                let minus = end_to_end_loss(&params, &x, label, &spec);
                ParamView::set(&mut params, flat, original);
                let numeric = (plus - minus) / (2.0 * step);
                let exact = ParamView::grad(&analytic, flat);
                let tol = (1e-4 * exact.abs()).max(1e-6);
                assert!(
                    (numeric - exact).abs() <= tol,
                    "{variant} seed {seed} param {flat}: fd {numeric} vs analytic {exact}"
                );
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "gradient check took {elapsed:.1} s");
    println!(
        "acceptance criterion 1 (gradient correctness, {checked} parameter checks \
         across 5 variants x 20 configs, {elapsed:.2} s): PASS"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: loss identities

#[test]
fn criterion_2_loss_identities() {
    // Maximal entropy at m = 0 coincides with the entropic loss.
    let mut rng = Rng::new(202);
    for i in 0..1000 {
        let c = 2 + (i % 7);
        let logits = random_logits(&mut rng, c, 10.0);
        let label = if i % 2 == 0 {
            ClassLabel::Known((i % c) as u32)
        } else {
            ClassLabel::Negative
        };
        let a = max_entropy_loss(&logits, label, 0.0);
        let b = entropic_loss(&logits, label);
        assert!((a.value - b.value).abs() <= 1e-12);
        for (x, y) in a.grad_logits.iter().zip(&b.grad_logits) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    // The objectosphere value decomposes into the entropic value plus
    // lambda times the magnitude penalty.
    for i in 0..1000 {
        let logits = random_logits(&mut rng, 5, 6.0);
        let h2: Vec<f64> = (0..8).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let label = if i % 2 == 0 {
            ClassLabel::Known((i % 5) as u32)
        } else {
            ClassLabel::Negative
        };
        let (xi, lambda) = (1.0, 0.01);
        let full = objectosphere_loss(&logits, &h2, label, xi, lambda).value;
        let base = entropic_loss(&logits, label).value;
        let norm = h2.iter().map(|v| v * v).sum::<f64>().sqrt();
        let penalty = if label.is_known() {
            let gap = (xi - norm).max(0.0);
            gap * gap
        } else {
            norm * norm
        };
        assert!((full - base - lambda * penalty).abs() <= 1e-9);
    }

    // The negative branch attains its minimum ln|G| exactly at uniform
    // logits, and any perturbation increases it.
    for g in [2usize, 4, 10] {
        let value = entropic_loss(&vec![0.0; g], ClassLabel::Negative).value;
        assert_eq!(value, (g as f64).ln(), "minimum at |G| = {g}");
        for k in 0..g {
            let mut logits = vec![0.0; g];
            logits[k] += 0.25;
            assert!(entropic_loss(&logits, ClassLabel::Negative).value > (g as f64).ln());
        }
    }
    println!("acceptance criterion 2 (loss identities on 1000 random inputs): PASS");
}

// ---------------------------------------------------------------------------
// criterion 3: open-set ROC against brute-force recomputation

fn random_matrix(seed: u64, rows: usize, c: usize, with_garbage: bool) -> ScoreMatrix {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let label = match i % 4 {
            0 => ClassLabel::Unknown,
            1 if i % 20 == 1 => ClassLabel::Background,
            _ => ClassLabel::Known(rng.range(c as u64) as u32),
        };
        if i % 211 == 0 {
            out.push(ScoreRow {
                true_label: label,
                scores: vec![f64::NAN; c],
                garbage: None,
                degenerate: true,
            });
            continue;
        }
        // Coarse quantization on some rows creates exact threshold ties; the
        // rest keep a dense grid so thousands of thresholds get swept.
        let grid = if i % 3 == 0 { 20.0 } else { 4000.0 };
        let scores: Vec<f64> = (0..c)
            .map(|_| (rng.uniform_in(-1.0, 1.0) * grid).round() / grid)
            .collect();
        let garbage = with_garbage.then(|| (rng.uniform_in(-1.0, 1.0) * grid).round() / grid);
        out.push(ScoreRow {
            true_label: label,
            scores,
            garbage,
            degenerate: false,
        });
    }
    ScoreMatrix {
        num_known: c,
        rows: out,
    }
}

#[test]
fn criterion_3_metrics_oracle() {
    let start = Instant::now();

    // Hand case from first principles.
    let hand = ScoreMatrix {
        num_known: 2,
        rows: vec![
            ScoreRow { true_label: ClassLabel::Known(0), scores: vec![0.9, 0.2], garbage: None, degenerate: false },
            ScoreRow { true_label: ClassLabel::Known(1), scores: vec![0.3, 0.8], garbage: None, degenerate: false },
            ScoreRow { true_label: ClassLabel::Known(0), scores: vec![0.4, 0.6], garbage: None, degenerate: false },
            ScoreRow { true_label: ClassLabel::Unknown, scores: vec![0.5, 0.1], garbage: None, degenerate: false },
            ScoreRow { true_label: ClassLabel::Unknown, scores: vec![0.7, 0.65], garbage: None, degenerate: false },
        ],
    };
    assert_eq!(tpir(&hand, 0.6).unwrap(), 2.0 / 3.0);
    assert_eq!(fpir(&hand, 0.6).unwrap(), 0.5);
    assert_eq!(fpir(&hand, 0.45).unwrap(), 1.0);

    // Brute force: every swept threshold recomputed through the pointwise
    // operations.
    let mut thresholds_checked = 0usize;
    for (seed, with_garbage) in [(31u64, false), (32, true)] {
        let m = random_matrix(seed, 10_000, 6, with_garbage);
        let curve = oroc_curve(&m).unwrap();
        for p in &curve.points {
            assert_eq!(p.tpir, tpir(&m, p.theta).unwrap(), "tpir at theta {}", p.theta);
            assert_eq!(p.fpir, fpir(&m, p.theta).unwrap(), "fpir at theta {}", p.theta);
            thresholds_checked += 1;
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "metrics oracle took {elapsed:.1} s");
    println!(
        "acceptance criterion 3 (open-set ROC vs brute force, {thresholds_checked} \
         thresholds on 10,000-row matrices, {elapsed:.2} s): PASS"
    );
}

// ---------------------------------------------------------------------------
// criterion 4: qualitative open-set replication on the synthetic benchmark

struct PipelineOutcome {
    tpir_at_1e2: f64,
    known_median: f64,
    unknown_median: f64,
    negative_peak_bin: usize,
}

fn run_pipeline(variant: LossVariant, train_set: &Dataset, val: &Dataset, probe: &Dataset) -> PipelineOutcome {
    let config = TrainConfig {
        epochs: 500,
        hidden1: 64,
        hidden2: 32,
        seed: 42,
        ..TrainConfig::new(LossSpec::new(variant))
    };
    let (params, _) = train(train_set, val, &config).unwrap();
    let extractor = Extractor::Adapter(&params);
    let with_garbage = variant == LossVariant::Garbage;
    let enroll_set = if with_garbage { train_set.clone() } else { known_only(train_set) };
    let gallery = enroll(&extractor, &enroll_set, with_garbage).unwrap();
    let probes = extractor.extract_all(probe);
    let scores = score_probes(&gallery, &probes).unwrap();
    let curve = oroc_curve(&scores).unwrap();
    let table = tpir_at_fpir(&curve, &[1e-2]);
    let tpir_at_1e2 = table[0].1.expect("400 unknown probes resolve FPIR = 1e-2");

    // Magnitudes of known/unknown probe features pooled with the negative
    // training features, ten shared bins.
    let mut features: Vec<ProbeFeature> = probes;
    for rec in train_set.records.iter().filter(|r| r.label == ClassLabel::Negative) {
        features.push(extractor.extract(rec));
    }
    let hist = magnitude_histogram(&features, 10).unwrap();
    let known_median = hist.group(LabelGroup::Known).unwrap().median;
    let unknown_median = hist.group(LabelGroup::Unknown).unwrap().median;
    let negative = hist.group(LabelGroup::Negative).unwrap();
    let negative_peak_bin = negative
        .counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &count)| count)
        .map(|(bin, _)| bin)
        .unwrap();
    PipelineOutcome {
        tpir_at_1e2,
        known_median,
        unknown_median,
        negative_peak_bin,
    }
}

#[test]
fn criterion_4_synthetic_open_set_replication() {
    let start = Instant::now();
    let cfg = SynthConfig::new(42, 10, 100, 8);
    let (train_set, val, probe) = synth_openset(&cfg).unwrap();

    let softmax_run = run_pipeline(LossVariant::SoftMax, &train_set, &val, &probe);
    let maxentropy_run = run_pipeline(LossVariant::MaxEntropy, &train_set, &val, &probe);
    let objectosphere_run = run_pipeline(LossVariant::Objectosphere, &train_set, &val, &probe);

    // (a) Negative-aware objectives beat the negative-free baseline at the
    // FPIR = 1e-2 operating point.
    assert!(
        maxentropy_run.tpir_at_1e2 > softmax_run.tpir_at_1e2,
        "maxentropy {} vs softmax {}",
        maxentropy_run.tpir_at_1e2,
        softmax_run.tpir_at_1e2
    );
    assert!(
        objectosphere_run.tpir_at_1e2 > softmax_run.tpir_at_1e2,
        "objectosphere {} vs softmax {}",
        objectosphere_run.tpir_at_1e2,
        softmax_run.tpir_at_1e2
    );

    // (b) Objectosphere magnitude structure: unknown probes sit below known
    // probes, and negative training samples pile up in the lowest decile bin.
    assert!(
        objectosphere_run.unknown_median < objectosphere_run.known_median,
        "unknown median {} vs known median {}",
        objectosphere_run.unknown_median,
        objectosphere_run.known_median
    );
    assert_eq!(
        objectosphere_run.negative_peak_bin, 0,
        "negative training magnitudes must peak in the lowest decile bin"
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "replication took {elapsed:.1} s");
    println!(
        "acceptance criterion 4 (synthetic open-set replication, TPIR@1e-2 softmax {:.3} < \
         maxentropy {:.3}, objectosphere {:.3}; medians unknown {:.2} < known {:.2}; \
         negative peak bin {}; {elapsed:.1} s): PASS",
        softmax_run.tpir_at_1e2,
        maxentropy_run.tpir_at_1e2,
        objectosphere_run.tpir_at_1e2,
        objectosphere_run.unknown_median,
        objectosphere_run.known_median,
        objectosphere_run.negative_peak_bin
    );
}

// ---------------------------------------------------------------------------
// criterion 5: determinism and byte-exact round-trips

#[test]
fn criterion_5_determinism_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::new(7, 4, 15, 5);

    // Identical seeds produce byte-identical datasets.
    let (t1, v1, p1) = synth_openset(&cfg).unwrap();
    let (t2, v2, p2) = synth_openset(&cfg).unwrap();
    for (a, b) in [(&t1, &t2), (&v1, &v2), (&p1, &p2)] {
        assert_eq!(encode_osef(a), encode_osef(b));
    }

    // OSEF file round-trip is byte-exact.
    let osef_path = dir.path().join("train.osef");
    write_embeddings(&t1, &osef_path, FileFormat::Binary).unwrap();
    let reread = read_embeddings(&osef_path, FileFormat::Binary).unwrap();
    assert_eq!(reread, t1);
    let osef_path2 = dir.path().join("train2.osef");
    write_embeddings(&reread, &osef_path2, FileFormat::Binary).unwrap();
    assert_eq!(
        std::fs::read(&osef_path).unwrap(),
        std::fs::read(&osef_path2).unwrap()
    );

    // Identical configs produce bit-identical trained models and CSVs.
    let tc = TrainConfig {
        epochs: 10,
        hidden1: 12,
        hidden2: 6,
        seed: 3,
        ..TrainConfig::new(LossSpec::new(LossVariant::Objectosphere))
    };
    let (m1, h1) = train(&t1, &v1, &tc).unwrap();
    let (m2, h2) = train(&t2, &v2, &tc).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(encode_model(&m1, &tc.loss), encode_model(&m2, &tc.loss));

    // OSAM file round-trip: loading and re-saving reproduces the bytes, and
    // freshly initialized parameters survive unchanged.
    let model_path = dir.path().join("model.osam");
    save_model(&m1, &tc.loss, &model_path).unwrap();
    let (loaded, loaded_spec) = load_model(&model_path).unwrap();
    let model_path2 = dir.path().join("model2.osam");
    save_model(&loaded, &loaded_spec, &model_path2).unwrap();
    assert_eq!(
        std::fs::read(&model_path).unwrap(),
        std::fs::read(&model_path2).unwrap()
    );
    let fresh = AdapterParams::init(11, 5, 8, 4, 4);
    let (fresh_back, _) =
        decode_model(&encode_model(&fresh, &tc.loss), "mem").unwrap();
    assert_eq!(fresh, fresh_back);

    // Scoring CSVs reproduce byte-identically across reruns.
    let extractor = Extractor::Adapter(&m1);
    let gallery = enroll(&extractor, &known_only(&t1), false).unwrap();
    let probes = extractor.extract_all(&p1);
    let csv_a = score_probes(&gallery, &probes).unwrap().to_csv();
    let probes_again = extractor.extract_all(&p1);
    let csv_b = score_probes(&gallery, &probes_again).unwrap().to_csv();
    assert_eq!(csv_a, csv_b);
    let parsed = ScoreMatrix::from_csv(&csv_a, "mem").unwrap();
    assert_eq!(parsed.to_csv(), csv_a);

    println!("acceptance criterion 5 (determinism and byte-exact round-trips): PASS");
}

// ---------------------------------------------------------------------------
// criterion 6: scale and shift invariances

#[test]
fn criterion_6_invariances() {
    let mut rng = Rng::new(606);

    // Softmax shift invariance.
    for _ in 0..500 {
        let logits = random_logits(&mut rng, 6, 20.0);
        let shift = rng.uniform_in(-100.0, 100.0);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    // Cosine scale invariance.
    for _ in 0..500 {
        let a: Vec<f64> = (0..5).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        if a.iter().map(|v| v * v).sum::<f64>() < 1e-6 || b.iter().map(|v| v * v).sum::<f64>() < 1e-6 {
            continue;
        }
        let c = rng.uniform_in(1e-4, 1e4);
        let scaled: Vec<f64> = a.iter().map(|v| c * v).collect();
        let x = oswatch::gallery::cosine(&a, &b).unwrap();
        let y = oswatch::gallery::cosine(&scaled, &b).unwrap();
        assert!((x - y).abs() <= 1e-7);
    }

    // Classification decisions are untouched by positive feature scaling.
    let records: Vec<EmbeddingRecord> = (0..12)
        .map(|i| {
            EmbeddingRecord::new(
                ClassLabel::Known(i % 4),
                (0..5).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect(),
            )
        })
        .collect();
    let enroll_set = Dataset::new(5, records).unwrap();
    let gallery = enroll(&Extractor::Baseline, &enroll_set, false).unwrap();
    let mut decisions_checked = 0usize;
    for _ in 0..200 {
        let feature: Vec<f64> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        if feature.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3 {
            continue;
        }
        for scale in [1e-3, 0.5, 7.0, 1e3] {
            let scaled: Vec<f64> = feature.iter().map(|v| v * scale).collect();
            let base = score_probes(
                &gallery,
                &[ProbeFeature { true_label: ClassLabel::Unknown, feature: feature.clone() }],
            )
            .unwrap();
            let varied = score_probes(
                &gallery,
                &[ProbeFeature { true_label: ClassLabel::Unknown, feature: scaled }],
            )
            .unwrap();
            for step in 0..8 {
                let theta = -1.0 + 0.25 * step as f64;
                let da = classify(&base.rows[0], theta);
                let db = classify(&varied.rows[0], theta);
                assert_eq!(da, db, "scale {scale}, theta {theta}");
                if matches!(da, Decision::Accept(_)) {
                    decisions_checked += 1;
                }
            }
        }
    }
    assert!(decisions_checked > 0, "the scaling check never exercised an accept");

    println!("acceptance criterion 6 (shift/scale invariances and decision stability): PASS");
}

// ---------------------------------------------------------------------------
// criterion 7: parameter-count audit

#[test]
fn criterion_7_parameter_count_audit() {
    let (d, h1, h2, c) = (2048usize, 512usize, 256usize, 602usize);
    let closed_form = param_count_formula(d, h1, h2, c);
    let enumerated = AdapterParams::zeros(d, h1, h2, c).param_count();
    assert_eq!(closed_form, enumerated);
    assert_eq!(closed_form, d * h1 + h1 + h1 * h2 + h2 + h2 * c + c);
    assert_eq!(closed_form, 1_335_130);
    assert!(closed_form < 1_700_000, "within the 1.7 million weight budget");
    println!(
        "acceptance criterion 7 (parameter audit: formula = enumeration = {closed_form} \
         < 1,700,000): PASS"
    );
}
