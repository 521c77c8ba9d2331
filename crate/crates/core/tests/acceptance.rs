//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{params, random_story, single_fact, small_config};
use qdren::data::{gen_entity_cloze, gen_single_fact, ClozeSpec, Dataset, PAD};
use qdren::data::synth::{default_entities, default_locations};
use qdren::gradcheck::{check_model, fixture};
use qdren::memory::{step, CellParams, MemoryState};
use qdren::model::{forward, load_checkpoint, save_checkpoint, Slot};
use qdren::optim::{clip_gradients, global_norm};
use qdren::output::attention;
use qdren::rng;
use qdren::tensor::{softmax, Tensor};
use qdren::training::{compare_modes, evaluate, gate_focus, prepare, train};
use qdren::{Activation, InputStyle, Mode, ModelConfig};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, elapsed: Duration, o: &Outcome) -> bool {
    println!(
        "criterion {n} [{}] {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    o.pass
}

fn gradient_oracle() -> Outcome {
    let mut worst = 0f64;
    let mut crossings = 0;
    for mode in [Mode::Ren, Mode::Qdren] {
        for phi in [Activation::Sigmoid, Activation::Prelu] {
            for style in [InputStyle::Sentences, InputStyle::Windows(3)] {
                let f = fixture(mode, phi, style, 8, 4, 0).expect("fixture");
                assert!(f.stories.iter().all(|s| s.sentences.len() == 3));
                let r = check_model(&f.params, &f.stories, &f.config, 1e-3).expect("check");
                worst = worst.max(r.max_rel_error);
                crossings += r.kink_crossings;
            }
        }
    }
    Outcome {
        pass: worst < 1e-3 && crossings == 0,
        detail: format!("max relative error {worst:.2e} over 8 configurations (limit 1e-3, eps 1e-3)"),
    }
}

fn invariant_suite() -> Outcome {
    let mut r = rng::stream(2024, 5);
    let mut failures = Vec::new();

    // Softmax and attention normalisation.
    for _ in 0..2000 {
        let n = r.gen_range(1..20);
        // Logits on a 1/256 grid and integer shifts keep x + c exact in f32.
        let x: Vec<f32> = (0..n).map(|_| r.gen_range(-7680i32..7680) as f32 / 256.0).collect();
        let c = r.gen_range(-50i32..50) as f32;
        let p = softmax(&Tensor::vector(x.clone()));
        let shifted = softmax(&Tensor::vector(x.iter().map(|v| v + c).collect()));
        let sum: f32 = p.data().iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.data().iter().zip(shifted.data()).any(|(a, b)| (a - b).abs() > 1e-6) {
            failures.push("softmax");
        }
        let hs: Vec<Tensor> = (0..r.gen_range(1..8))
            .map(|_| Tensor::vector((0..4).map(|_| r.gen_range(-1.0..1.0)).collect()))
            .collect();
        let q = Tensor::vector((0..4).map(|_| r.gen_range(-3.0..3.0)).collect());
        let a: f32 = attention(&q, &hs).unwrap().iter().sum();
        if (a - 1.0).abs() > 1e-6 {
            failures.push("attention");
        }
    }

    // Unit-norm memories after every step.
    for seed in 0..300 {
        let mode = if seed % 2 == 0 { Mode::Ren } else { Mode::Qdren };
        let config = small_config(mode, 6, 3);
        let p = params(&config, seed);
        let cell = CellParams {
            u: p.get(Slot::U).clone(),
            v: p.get(Slot::V).clone(),
            w: p.get(Slot::W).clone(),
            keys: p.get(Slot::Keys).clone(),
            phi: if seed % 3 == 0 { Activation::Sigmoid } else { Activation::Prelu },
            slope: p.get(Slot::CellSlope).item(),
            mode,
        };
        let q = Tensor::vector((0..6).map(|_| r.gen_range(-0.5..0.5)).collect());
        let mut state = MemoryState::from_keys(&cell.keys);
        for _ in 0..8 {
            let s = Tensor::vector((0..6).map(|_| r.gen_range(-0.5..0.5)).collect());
            state = step(&state, &s, &q, &cell).unwrap().0;
            if state.hiddens.iter().any(|h| (h.l2_norm() - 1.0).abs() > 1e-5) {
                failures.push("unit norm");
            }
        }
    }

    // REN and QDREN agree bit for bit when the question vector is zero.
    for seed in 0..300 {
        let mut story = random_story(seed, 1 + (seed as usize % 5));
        story.question = vec![PAD; 1 + (seed as usize % 4)];
        let p = params(&small_config(Mode::Ren, 6, 3), seed);
        let a = forward(&p, &story, &small_config(Mode::Ren, 6, 3)).unwrap();
        let b = forward(&p, &story, &small_config(Mode::Qdren, 6, 3)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&a.logits) != bits(&b.logits) || bits(&a.trace.gates) != bits(&b.trace.gates) {
            failures.push("ren/qdren equality");
        }
    }

    // Clipping never exceeds the bound.
    for _ in 0..2000 {
        let mut grads: Vec<Tensor> = (0..r.gen_range(1..5))
            .map(|_| Tensor::vector((0..r.gen_range(1..10)).map(|_| r.gen_range(-100.0..100.0)).collect()))
            .collect();
        let max: f32 = r.gen_range(0.1..50.0);
        let before = global_norm(&grads);
        clip_gradients(&mut grads, max);
        let after = global_norm(&grads);
        if after > max + 1e-5 * max.max(1.0) || after > before + 1e-5 {
            failures.push("clip");
        }
    }

    // Checkpoint round trip.
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(Mode::Qdren, 6, 3);
    let p = params(&config, 3);
    save_checkpoint(&p, &config, None, &dir.path().join("m")).unwrap();
    let back = load_checkpoint(&dir.path().join("m")).unwrap();
    let same = p
        .tensors()
        .iter()
        .zip(back.params.tensors())
        .all(|(a, b)| a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !same || back.config != config {
        failures.push("checkpoint");
    }

    failures.dedup();
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "unit norm, softmax/attention, ren=qdren at q=0, clip bound, checkpoint round trip".into()
        } else {
            format!("violations: {failures:?}")
        },
    }
}

fn single_fact_config(mode: Mode) -> ModelConfig {
    ModelConfig {
        dim: 32,
        blocks: 10,
        mode,
        lr: 0.001,
        l2: 0.0,
        dropout: 0.5,
        max_epochs: 200,
        ..ModelConfig::default()
    }
}

const STORY_PATIENCE: usize = 50;
const CLOZE_PATIENCE: usize = 20;

fn main() {
    let mut all = true;

    let t = Instant::now();
    let o = gradient_oracle();
    let ok = o.pass && t.elapsed() < Duration::from_secs(60);
    all &= report(1, "gradient oracle", t.elapsed(), &Outcome { pass: ok, ..o });

    let t = Instant::now();
    let o = invariant_suite();
    let ok = o.pass && t.elapsed() < Duration::from_secs(30);
    all &= report(2, "invariant suite", t.elapsed(), &Outcome { pass: ok, ..o });

    // Single-fact task: 1000/200/200 stories, 5 entities, 6 locations.
    let t = Instant::now();
    let raw = single_fact(1000, 200, 200, 6);
    let mut qcfg = single_fact_config(Mode::Qdren);
    let data = prepare(&raw, &mut qcfg).unwrap();
    let (qparams, qreport) = train(&qcfg, &data, STORY_PATIENCE).unwrap();
    let val = evaluate(&qparams, &qcfg, &data.valid).unwrap().accuracy;
    let test = evaluate(&qparams, &qcfg, &data.test).unwrap().accuracy;
    let elapsed = t.elapsed();
    all &= report(
        3,
        "single-fact accuracy",
        elapsed,
        &Outcome {
            pass: val >= 0.95 && test >= 0.95 && qreport.epochs.len() <= 200 && elapsed < Duration::from_secs(600),
            detail: format!(
                "val {val:.3}, test {test:.3} (>= 0.95), best epoch {} of {}",
                qreport.best_epoch,
                qreport.epochs.len()
            ),
        },
    );

    // Question-dependence ablation on anonymised cloze stories with windows.
    let t = Instant::now();
    let spec = ClozeSpec::new(1000, 10);
    let tr = gen_entity_cloze(1, &spec).unwrap();
    let va = gen_entity_cloze(2, &ClozeSpec { n_stories: 300, ..spec.clone() }).unwrap();
    let te = gen_entity_cloze(3, &ClozeSpec { n_stories: 500, ..spec.clone() }).unwrap();
    let cloze = Dataset::from_raw(&tr, &va, &te, 50_000).unwrap();
    let shared = ModelConfig {
        dim: 32,
        blocks: 10,
        input_style: InputStyle::Windows(5),
        max_epochs: 60,
        ..ModelConfig::default()
    };
    let cmp = compare_modes(&cloze, &shared, &[0, 1, 2], CLOZE_PATIENCE).unwrap();
    let per_seed: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| format!("seed {}: ren {:.3} qdren {:.3}", r.seed, r.acc_a, r.acc_b))
        .collect();
    all &= report(
        4,
        "question-dependence ablation",
        t.elapsed(),
        &Outcome {
            pass: cmp.mean_delta >= 0.05 && cmp.wins_b() >= 2,
            detail: format!(
                "mean delta {:+.3} (>= +0.05), qdren wins {}/3; {}",
                cmp.mean_delta,
                cmp.wins_b(),
                per_seed.join("; ")
            ),
        },
    );

    // Gate focus on held-out single-fact stories.
    let t = Instant::now();
    let mut rcfg = single_fact_config(Mode::Ren);
    prepare(&raw, &mut rcfg).unwrap();
    let (rparams, _) = train(&rcfg, &data, STORY_PATIENCE).unwrap();
    let held_out = &data.test;
    let qf = gate_focus(&qparams, &qcfg, held_out).unwrap();
    let rf = gate_focus(&rparams, &rcfg, held_out).unwrap();
    all &= report(
        5,
        "gate focus",
        t.elapsed(),
        &Outcome {
            pass: held_out.len() >= 50 && qf.ratio >= 2.0 && qf.ratio > rf.ratio,
            detail: format!(
                "qdren ratio {:.2} (on {:.3} / off {:.3}), ren ratio {:.2} (on {:.3} / off {:.3}), {} stories",
                qf.ratio,
                qf.on,
                qf.off,
                rf.ratio,
                rf.on,
                rf.off,
                held_out.len()
            ),
        },
    );

    // Overfit probe: 10 stories, 500 epochs, both modes.
    let t = Instant::now();
    let ten = gen_single_fact(1, 10, &default_entities(5), &default_locations(6), 6).unwrap();
    let probe = Dataset::from_raw(&ten, &ten, &ten, 1000).unwrap();
    let mut details = Vec::new();
    let mut probe_ok = true;
    for mode in [Mode::Ren, Mode::Qdren] {
        let mut c = ModelConfig {
            dropout: 0.0,
            max_epochs: 500,
            ..single_fact_config(mode)
        };
        let d = prepare(&probe, &mut c).unwrap();
        let (_, rep) = train(&c, &d, 500).unwrap();
        let hit = rep.epochs.iter().find(|e| e.train_loss < 0.05).map(|e| e.epoch);
        probe_ok &= hit.is_some();
        details.push(match hit {
            Some(e) => format!("{mode} below 0.05 at epoch {e}"),
            None => format!("{mode} min loss {:.4}", rep.epochs.iter().map(|e| e.train_loss).fold(f64::MAX, f64::min)),
        });
    }
    let elapsed = t.elapsed();
    all &= report(
        6,
        "overfit probe",
        elapsed,
        &Outcome {
            pass: probe_ok && elapsed < Duration::from_secs(120),
            detail: details.join(", "),
        },
    );

    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES" });
    if !all {
        std::process::exit(1);
    }
}
