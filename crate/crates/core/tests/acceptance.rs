//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::time::Instant;

use concner_core::bilingen::{generate, write_corpora, GenConfig};
use concner_core::corpus::{LabelSet, Tag};
use concner_core::encoder::{EncoderConfig, ModelParams};
use concner_core::eval::{entity_f1_sequences, label_agreement};
use concner_core::experiment::Variant;
use concner_core::losses::{ce_loss, joint_loss, kd_mse_loss, lcl_loss, tcl_loss, LossWeights};
use concner_core::numerics::Tensor;
use concner_core::trainer::{
    build_bilingual_batch, distill_student, joint_objective_gradients, predict_corpus, train_teacher, Checkpoint,
    EncodedCorpus, ModelConfig, Objective, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = (bool, String);

// ---------- literal scalar transcriptions of the objectives ----------

fn cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    if nu.sqrt() < 1e-12 || nv.sqrt() < 1e-12 {
        return 0.0;
    }
    dot / (nu.sqrt() * nv.sqrt())
}

fn oracle_ce(probs: &[Vec<f64>], gold: &[usize], sentences: &[Vec<usize>]) -> f64 {
    let mut outer = 0.0;
    let mut counted = 0;
    for s in sentences {
        if s.is_empty() {
            continue;
        }
        let mut inner = 0.0;
        for &i in s {
            inner += -(probs[i][gold[i]].max(1e-30)).ln();
        }
        outer += inner / s.len() as f64;
        counted += 1;
    }
    outer / counted as f64
}

fn oracle_lcl(h: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let m = h.len();
    let mut total = 0.0;
    let mut eligible = 0;
    for i in 0..m {
        let positives: Vec<usize> = (0..m).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..m {
            if k != i {
                denom += (cos(&h[i], &h[k]) / tau).exp();
            }
        }
        let mut li = 0.0;
        for &p in &positives {
            li += -((cos(&h[i], &h[p]) / tau).exp() / denom).ln();
        }
        total += li / positives.len() as f64;
        eligible += 1;
    }
    if eligible == 0 {
        0.0
    } else {
        total / eligible as f64
    }
}

fn oracle_tcl(r: &[Vec<f64>], partner: &[usize], tau: f64) -> f64 {
    let n = r.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (cos(&r[i], &r[k]) / tau).exp();
            }
        }
        total += -((cos(&r[i], &r[partner[i]]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

fn oracle_kd(student: &[Vec<f64>], teacher: &[Vec<f64>], sentences: &[Vec<usize>]) -> f64 {
    let mut outer = 0.0;
    let mut counted = 0;
    for s in sentences {
        if s.is_empty() {
            continue;
        }
        let mut inner = 0.0;
        for &i in s {
            let y = student[i].len();
            let mut mse = 0.0;
            for c in 0..y {
                mse += (student[i][c] - teacher[i][c]).powi(2);
            }
            inner += mse / y as f64;
        }
        outer += inner / s.len() as f64;
        counted += 1;
    }
    outer / counted as f64
}

// ---------- random instances ----------

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

fn random_distributions(rng: &mut ChaCha8Rng, rows: usize, labels: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..labels).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_sentences(rng: &mut ChaCha8Rng, rows: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows {
        let len = rng.gen_range(1..=(rows - start).min(6));
        out.push((start..start + len).collect());
        start += len;
    }
    out
}

/// Involution pairing sentence `i` with `i + N`.
fn translation_pairing(two_n: usize) -> Vec<usize> {
    let n = two_n / 2;
    (0..two_n).map(|i| (i + n) % two_n).collect()
}

// ---------- criteria ----------

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=16);
        let labels_n = rng.gen_range(2..=9);
        let probs = random_distributions(&mut rng, m, labels_n);
        let gold: Vec<usize> = (0..m).map(|_| rng.gen_range(0..labels_n)).collect();
        let sentences = random_sentences(&mut rng, m);
        let got = ce_loss(&tensor(&probs), &gold, &sentences).unwrap();
        worst = worst.max((got - oracle_ce(&probs, &gold, &sentences)).abs());

        let h = random_matrix(&mut rng, m, d);
        let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..3)).collect();
        let got = lcl_loss(&tensor(&h), &labels, 0.1).unwrap();
        worst = worst.max((got - oracle_lcl(&h, &labels, 0.1)).abs());

        let two_n = 2 * rng.gen_range(1..=4);
        let r = random_matrix(&mut rng, two_n, d);
        let partner = translation_pairing(two_n);
        let got = tcl_loss(&tensor(&r), &partner, 0.1).unwrap();
        worst = worst.max((got - oracle_tcl(&r, &partner, 0.1)).abs());

        let student = random_distributions(&mut rng, m, labels_n);
        let teacher = random_distributions(&mut rng, m, labels_n);
        let got = kd_mse_loss(&tensor(&student), &tensor(&teacher), &sentences).unwrap();
        worst = worst.max((got - oracle_kd(&student, &teacher, &sentences)).abs());
    }
    (worst <= 1e-10, format!("max |batched - scalar| = {worst:.3e} over 4x50 instances"))
}

fn criterion_2() -> Outcome {
    let set = LabelSet::default();
    let enc = EncoderConfig {
        vocab_size: 10,
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 8,
        max_len: 8,
        label_count: set.len(),
        init_seed: 5,
        init_scale: 0.5,
    };
    let params = ModelParams::init(&enc).unwrap();
    let src = EncodedCorpus {
        ids: vec![vec![2, 3, 4, 5]],
        labels: vec![vec![set.begin(0), set.inside(0), set.outside(), set.begin(1)]],
    };
    let tgt = EncodedCorpus {
        ids: vec![vec![6, 5, 3, 7]],
        labels: vec![vec![set.outside(), set.begin(1), set.begin(0), set.inside(0)]],
    };
    let batch = build_bilingual_batch(&src, &tgt, &[0]).unwrap();
    let objective = Objective {
        weights: LossWeights {
            alpha: 0.5,
            beta: 0.25,
            tau_lcl: 0.1,
            tau_tcl: 0.1,
        },
        use_lcl: true,
        use_tcl: true,
        lcl_include_o: true,
    };
    let (_, grads) = joint_objective_gradients(&params, &batch, &objective, set.outside()).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();

    let theta = params.flatten();
    let eps = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for j in 0..theta.len() {
        let mut value_at = |x: f64| {
            let mut t = theta.clone();
            t[j] = x;
            probe.assign_flat(&t);
            joint_objective_gradients(&probe, &batch, &objective, set.outside())
                .unwrap()
                .0
                .l_total
        };
        let fd = (value_at(theta[j] + eps) - value_at(theta[j] - eps)) / (2.0 * eps);
        let a = analytic[j];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(err);
        checked += 1;
    }
    (
        worst < 1e-4,
        format!("max relative error {worst:.3e} over {checked} parameters"),
    )
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let tcl2 = tcl_loss(&tensor(&[vec![1.0, 0.3], vec![-0.2, 0.9]]), &[1, 0], 0.1).unwrap();
    ok &= tcl2 == 0.0;
    notes.push(format!("TCL(2N=2)={tcl2}"));

    // equal pairwise similarities: four identical vectors
    let r = vec![vec![0.5, -1.0, 2.0]; 4];
    let tcl4 = tcl_loss(&tensor(&r), &[2, 3, 0, 1], 0.1).unwrap();
    ok &= (tcl4 - 3f64.ln()).abs() <= 1e-9;
    notes.push(format!("TCL(2N=4)-ln3={:.1e}", tcl4 - 3f64.ln()));

    let h = vec![vec![0.2, 0.4, -0.1]; 3];
    let lcl = lcl_loss(&tensor(&h), &[4, 4, 4], 0.1).unwrap();
    ok &= (lcl - 2f64.ln()).abs() <= 1e-9;
    notes.push(format!("LCL-ln2={:.1e}", lcl - 2f64.ln()));

    let probs = vec![vec![1.0 / 9.0; 9]; 5];
    let ce = ce_loss(&tensor(&probs), &[0, 3, 8, 2, 5], &[vec![0, 1], vec![2, 3, 4]]).unwrap();
    ok &= (ce - 9f64.ln()).abs() <= 1e-9;
    notes.push(format!("CE-ln9={:.1e}", ce - 9f64.ln()));
    (ok, notes.join(", "))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_inv: f64 = 0.0;
    let mut min_loss = f64::INFINITY;
    for _ in 0..1000 {
        let m = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=16);
        let h = random_matrix(&mut rng, m, d);
        let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..4)).collect();
        let base = lcl_loss(&tensor(&h), &labels, 0.1).unwrap();
        let c = rng.gen_range(0.01..100.0);
        let scaled: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
        worst_inv = worst_inv.max((lcl_loss(&tensor(&scaled), &labels, 0.1).unwrap() - base).abs());
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let ph: Vec<Vec<f64>> = perm.iter().map(|&i| h[i].clone()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        worst_inv = worst_inv.max((lcl_loss(&tensor(&ph), &pl, 0.1).unwrap() - base).abs());

        let two_n = 2 * rng.gen_range(1..=4);
        let r = random_matrix(&mut rng, two_n, d);
        let partner = translation_pairing(two_n);
        let base_t = tcl_loss(&tensor(&r), &partner, 0.1).unwrap();
        let scaled: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        worst_inv = worst_inv.max((tcl_loss(&tensor(&scaled), &partner, 0.1).unwrap() - base_t).abs());
        let mut perm: Vec<usize> = (0..two_n).collect();
        for i in (1..two_n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut inverse = vec![0; two_n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let pr: Vec<Vec<f64>> = perm.iter().map(|&i| r[i].clone()).collect();
        let pp: Vec<usize> = perm.iter().map(|&old| inverse[partner[old]]).collect();
        worst_inv = worst_inv.max((tcl_loss(&tensor(&pr), &pp, 0.1).unwrap() - base_t).abs());

        let labels_n = 9;
        let probs = random_distributions(&mut rng, m, labels_n);
        let gold: Vec<usize> = (0..m).map(|_| rng.gen_range(0..labels_n)).collect();
        let sentences = random_sentences(&mut rng, m);
        let ce = ce_loss(&tensor(&probs), &gold, &sentences).unwrap();
        let teacher = random_distributions(&mut rng, m, labels_n);
        let kd = kd_mse_loss(&tensor(&probs), &tensor(&teacher), &sentences).unwrap();
        let joint = joint_loss(ce, base, base_t, &LossWeights::default());
        min_loss = min_loss.min(base).min(base_t).min(ce).min(kd).min(joint);
    }
    (
        worst_inv <= 1e-9 && min_loss >= 0.0,
        format!("max invariance deviation {worst_inv:.3e}, min loss {min_loss:.3e} over 1000 instances"),
    )
}

struct TrendRun {
    means: [f64; 3],
    teachers: Vec<Checkpoint>,
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn trend_runs() -> (TrendRun, f64) {
    let corpora = generate(&GenConfig::default()).unwrap();
    let base = TrainConfig::default();
    let model = ModelConfig::default();
    let start = Instant::now();
    let mut sums = [0.0; 3];
    let mut teachers = Vec::new();
    for (slot, variant) in [Variant::Full, Variant::EnTrans, Variant::En].into_iter().enumerate() {
        for &seed in &SEEDS {
            let mut cfg = variant.configure(&base);
            cfg.seed = seed;
            let teacher = train_teacher(&cfg, &model, &corpora, &corpora.d_dev).unwrap().checkpoint;
            let predicted = predict_corpus(&teacher, &corpora.d_test).unwrap();
            sums[slot] += entity_f1_sequences(
                &corpora.d_test.sentences.iter().map(|s| s.labels.clone()).collect::<Vec<_>>(),
                &predicted,
                &corpora.d_test.label_set,
            )
            .unwrap()
            .micro
            .f1;
            if variant == Variant::Full {
                teachers.push(teacher);
            }
        }
    }
    let means = sums.map(|s| s / SEEDS.len() as f64);
    (TrendRun { means, teachers }, start.elapsed().as_secs_f64())
}

fn criterion_5(run: &TrendRun, secs: f64) -> Outcome {
    let [full, union, src] = run.means;
    (
        full >= union && union >= src && secs < 600.0,
        format!("mean target F1 full {full:.4} >= CE-union {union:.4} >= CE-source {src:.4}; {secs:.0}s"),
    )
}

fn criterion_6(run: &TrendRun) -> Outcome {
    let corpora = generate(&GenConfig::default()).unwrap();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut total = 0.0;
    let mut unchanged = true;
    for (teacher, &seed) in run.teachers.iter().zip(&SEEDS) {
        let path = dir.path().join(format!("teacher{seed}.ckpt"));
        teacher.save(&path).unwrap();
        let before = Sha256::digest(std::fs::read(&path).unwrap());
        let in_memory = teacher.to_bytes();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let loaded = Checkpoint::load(&path).unwrap();
        let student = distill_student(&loaded, &corpora.d_unlabeled, &cfg, None).unwrap();
        let a = predict_corpus(&loaded, &corpora.d_unlabeled).unwrap();
        let b = predict_corpus(&student.checkpoint, &corpora.d_unlabeled).unwrap();
        total += label_agreement(&a, &b).unwrap();
        unchanged &= Sha256::digest(std::fs::read(&path).unwrap()) == before;
        unchanged &= loaded.to_bytes() == in_memory;
    }
    let mean = total / run.teachers.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    (
        mean >= 0.90 && unchanged && secs < 300.0,
        format!("mean agreement {mean:.4}; teacher bytes unchanged: {unchanged}; {secs:.0}s"),
    )
}

fn criterion_7() -> Outcome {
    let corpora = generate(&GenConfig::default()).unwrap();
    let cfg = TrainConfig {
        use_lcl: false,
        use_tcl: false,
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let run = train_teacher(&cfg, &ModelConfig::default(), &corpora, &corpora.d_dev).unwrap();
    let text = run.log.to_text();
    let mut steps = 0;
    let mut worst: f64 = 0.0;
    let mut absent = true;
    for line in text.lines().filter(|l| !l.starts_with("dev")) {
        let cols: Vec<&str> = line.split('\t').collect();
        let l_ce: f64 = cols[1].parse().unwrap();
        let l_total: f64 = cols[4].parse().unwrap();
        absent &= cols[2] == "-" && cols[3] == "-";
        worst = worst.max((l_total - cfg.weights.alpha * l_ce).abs());
        steps += 1;
    }
    (
        steps == 200 && absent && worst <= 1e-12,
        format!("{steps} logged steps, max |l_total - alpha*l_ce| = {worst:.1e}, contrastive columns absent: {absent}"),
    )
}

/// Spans by direct enumeration of every (start, end) pair, applying the
/// repair rule locally: an I-T starts an entity unless its predecessor is
/// B-T or I-T.
fn oracle_spans(labels: &[usize], set: &LabelSet) -> HashSet<(usize, usize, usize)> {
    let ty = |l: usize| match set.tag(l) {
        Tag::Begin(t) | Tag::Inside(t) => Some(t),
        Tag::Outside => None,
    };
    let is_inside = |l: usize, t: usize| set.tag(l) == Tag::Inside(t);
    let mut spans = HashSet::new();
    for s in 0..labels.len() {
        let Some(t) = ty(labels[s]) else { continue };
        let starts = match set.tag(labels[s]) {
            Tag::Begin(_) => true,
            _ => s == 0 || ty(labels[s - 1]) != Some(t),
        };
        if !starts {
            continue;
        }
        for e in s + 1..=labels.len() {
            let body = (s + 1..e).all(|j| is_inside(labels[j], t));
            let closed = e == labels.len() || !is_inside(labels[e], t);
            if body && closed {
                spans.insert((t, s, e));
            }
        }
    }
    spans
}

fn criterion_8() -> Outcome {
    let set = LabelSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..8);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..n {
            let len = rng.gen_range(1..12);
            let g: Vec<usize> = (0..len).map(|_| rng.gen_range(0..set.len())).collect();
            let p: Vec<usize> = (0..len)
                .map(|i| {
                    if rng.gen_bool(0.6) {
                        g[i]
                    } else {
                        rng.gen_range(0..set.len())
                    }
                })
                .collect();
            gold.push(g);
            pred.push(p);
        }
        let report = entity_f1_sequences(&gold, &pred, &set).unwrap();
        let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(&pred) {
            let gs = oracle_spans(g, &set);
            let ps = oracle_spans(p, &set);
            tp += gs.intersection(&ps).count();
            np += ps.len();
            ng += gs.len();
        }
        let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
        let recall = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if report.micro.f1 != f1 || report.micro.true_positives != tp || report.micro.predicted != np {
            mismatches += 1;
        }
    }
    let id = |n: &str| set.index_of(n).unwrap();
    let gold = vec![vec![id("B-PER"), id("I-PER"), id("O"), id("B-LOC")]];
    let pred = vec![vec![id("B-PER"), id("I-PER"), id("O"), id("O")]];
    let r = entity_f1_sequences(&gold, &pred, &set).unwrap().micro;
    let fixture = r.precision == 1.0 && r.recall == 0.5 && r.f1 == 2.0 / 3.0;
    (
        mismatches == 0 && fixture,
        format!(
            "{mismatches} oracle mismatches over 200 corpora; fixture P={} R={} F1={}",
            r.precision, r.recall, r.f1
        ),
    )
}

fn criterion_9() -> Outcome {
    let gen = GenConfig {
        n_train: 120,
        n_unlabeled: 120,
        n_test: 40,
        n_dev: 40,
        ..GenConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 4,
        eval_every: 10,
        kd_epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    };
    let artifacts = || {
        let corpora = generate(&gen).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpora(dir.path(), &corpora, &[]).unwrap();
        let corpus_bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let teacher = train_teacher(&cfg, &ModelConfig::default(), &corpora, &corpora.d_dev).unwrap();
        let student = distill_student(&teacher.checkpoint, &corpora.d_unlabeled, &cfg, None).unwrap();
        (
            corpus_bytes,
            teacher.checkpoint.to_bytes(),
            teacher.log.to_text(),
            student.checkpoint.to_bytes(),
            student.log.to_text(),
        )
    };
    let a = artifacts();
    let b = artifacts();
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3, a.4 == b.4];
    (
        same.iter().all(|&s| s),
        format!("corpora/teacher/teacher-log/student/student-log identical: {same:?}"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "loss oracle equivalence", criterion_1()),
        (2, "gradient correctness", criterion_2()),
        (3, "analytic fixtures", criterion_3()),
        (4, "contrastive invariances and nonnegativity", criterion_4()),
    ];
    let (trend, secs) = trend_runs();
    results.push((5, "synthetic transfer trend", criterion_5(&trend, secs)));
    results.push((6, "distillation fidelity", criterion_6(&trend)));
    results.push((7, "ablation toggle contract", criterion_7()));
    results.push((8, "scoring correctness", criterion_8()));
    results.push((9, "reproducibility", criterion_9()));

    let mut failed = 0;
    for (n, name, (pass, detail)) in &results {
        println!(
            "acceptance criterion {n} ({name}): {} | {detail}",
            if *pass { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
