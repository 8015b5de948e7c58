//! Acceptance checks, run in order by a plain `main`. Each prints one
//! `PASS`/`FAIL` line; the process fails if any check does.
//!
//! Trained runs are cached by (variant, seed) so the learning checks reuse them.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use gridptr::checkpoint;
use gridptr::data::{filter_trainable, BBox, EmbeddingTable, FeatureProvider, OcrToken};
use gridptr::gradcheck::grad_check_terms;
use gridptr::grid::{build_text_grid, cells_for_box};
use gridptr::metrics::{ensemble_select, levenshtein, nls, vqa_accuracy, EnsembleInput, Source};
use gridptr::model::{
    bce_loss, predict_multiscale, train, ModelConfig, PointerModel, Providers, StackMode, TrainConfig, TrainOutcome,
};
use gridptr::nn::Mode;
use gridptr::synth::{generate, SynthConfig, SynthCorpus};
use gridptr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) -> bool {
    println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------------------
// Shared synthetic task

const SYNTH_SEED: u64 = 42;
const GRID: usize = 19;

fn corpus() -> &'static SynthCorpus {
    static C: OnceLock<SynthCorpus> = OnceLock::new();
    C.get_or_init(|| {
        generate(&SynthConfig {
            seed: SYNTH_SEED,
            count: 200,
            grid: GRID,
            ..SynthConfig::default()
        })
        .unwrap()
    })
}

struct Run {
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn trained(stack: StackMode, seed: u64) -> Arc<Run> {
    static RUNS: OnceLock<Mutex<HashMap<(String, u64), Arc<Run>>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(r) = runs.lock().unwrap().get(&(stack.to_string(), seed)) {
        return r.clone();
    }
    let start = Instant::now();
    let c = corpus();
    let features = FeatureProvider::from_records(c.features.clone(), GRID).unwrap();
    let (kept, discarded) = filter_trainable(c.examples.clone());
    assert!(discarded.is_empty());
    let config = ModelConfig {
        stack,
        ..ModelConfig::default()
    };
    let model = PointerModel::new(config, seed).unwrap();
    let train_cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(model, &kept, &EmbeddingTable::fixture(), &features, &train_cfg).unwrap();
    let run = Arc::new(Run {
        outcome,
        elapsed: start.elapsed(),
    });
    runs.lock().unwrap().insert((stack.to_string(), seed), run.clone());
    run
}

// ---------------------------------------------------------------------------

fn gradient_fidelity() -> bool {
    let start = Instant::now();
    let config = ModelConfig {
        vis_channels: 8,
        emb_dim: 6,
        lstm_hidden: 8,
        lstm_layers: 2,
        q_dim: 12,
        att_hidden: 10,
        att_dim: 7,
        fcn_widths: [6, 5],
        stack: StackMode::Stacked,
        dropout: 0.5,
    };
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    for seed in 0..5u64 {
        let mut model = PointerModel::<f64>::new(config.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let f_m = Tensor::from_fn(&[5, 5, 14], |_| rng.random_range(-1.0..1.0));
        let q: Vec<Tensor<f64>> = (0..5).map(|_| Tensor::from_fn(&[6], |_| rng.random_range(-1.0..1.0))).collect();
        let answer = rng.random_range(0..25);
        let gt = Tensor::from_fn(&[5, 5], |i| (i == answer) as u8 as f64);
        let r = grad_check_terms(
            &mut model,
            |m: &mut PointerModel<f64>, backward| {
                let mut drop = ChaCha8Rng::seed_from_u64(seed);
                m.loss_terms(&f_m, &q, &gt, Mode::Train, &mut drop, backward)
            },
            5e-5,
        )
        .unwrap();
        if r.max_relative_error > worst {
            worst = r.max_relative_error;
            where_ = format!("seed {seed} {}", r.worst);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 60.0;
    report(
        1,
        "gradient fidelity",
        pass,
        format!("max relative error {worst:.2e} ({where_}) over 5 seeds, limit 1e-4; {secs:.1}s, limit 60s"),
    )
}

fn synthetic_overfit() -> bool {
    let run = trained(StackMode::Stacked, TrainConfig::default().seed);
    let log = &run.outcome.log;
    let hit = log.iter().find(|r| r.train_anls >= 0.95);
    let secs = run.elapsed.as_secs_f64();
    let pass = hit.is_some_and(|r| r.epoch <= 300) && secs < 600.0;
    let detail = match hit {
        Some(r) => format!("train ANLS {:.4} at epoch {}", r.train_anls, r.epoch),
        None => format!("best train ANLS {:.4}, never reached 0.95", run.outcome.best_anls),
    };
    report(2, "synthetic overfit", pass, format!("{detail}; {} epochs in {secs:.0}s, limit 600s", log.len()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn variant_ordering() -> bool {
    let mut medians = Vec::new();
    let mut detail = Vec::new();
    for stack in [StackMode::Stacked, StackMode::Single, StackMode::Fcn] {
        let finals: Vec<f64> = (0..3).map(|seed| trained(stack, seed).outcome.final_anls()).collect();
        let m = median(finals.clone());
        detail.push(format!("{stack} {m:.4} {finals:.4?}"));
        medians.push(m);
    }
    let pass = medians[0] >= medians[1] && medians[1] >= medians[2];
    report(3, "variant ordering", pass, format!("median final train ANLS: {}", detail.join("; ")))
}

/// Textbook O(nm) table, kept separate from the library's rolling-row version.
fn edit_distance_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + cost).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn metric_oracles() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alphabet: Vec<char> = "abcdeé 5".chars().collect();
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..12);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        if levenshtein(&a, &b) != edit_distance_table(&a, &b) {
            mismatches += 1;
        }
    }
    let s = nls("50p", "50", None);
    let humans = |h: usize| -> Vec<String> {
        (0..10).map(|i| if i < h { "stop".to_string() } else { format!("other{i}") }).collect()
    };
    let vqa: Vec<f64> = [0, 1, 2, 3, 10].iter().map(|&h| vqa_accuracy("stop", &humans(h)).unwrap()).collect();
    let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0];
    let pass = mismatches == 0 && (s - 0.6667).abs() <= 1e-4 && vqa == expect;
    report(
        4,
        "metric oracles",
        pass,
        format!("levenshtein mismatches {mismatches}/1000; nls(50p, 50) = {s:.6}; vqa {vqa:.4?}"),
    )
}

/// Supersamples the unit square on a fine pixel lattice and records which
/// grid cell each pixel centre falls in; a box covers a cell when any
/// pixel centre strictly inside the box lies in the cell.
fn raster_cells(b: &BBox, grid: usize, res: usize) -> Vec<(usize, usize)> {
    let mut hit = vec![false; grid * grid];
    for py in 0..res {
        let y = (py as f64 + 0.5) / res as f64;
        if y <= b.y0 || y >= b.y1 {
            continue;
        }
        for px in 0..res {
            let x = (px as f64 + 0.5) / res as f64;
            if x <= b.x0 || x >= b.x1 {
                continue;
            }
            let (r, c) = ((y * grid as f64) as usize, (x * grid as f64) as usize);
            hit[r.min(grid - 1) * grid + c.min(grid - 1)] = true;
        }
    }
    (0..grid * grid).filter(|&i| hit[i]).map(|i| (i / grid, i % grid)).collect()
}

fn grid_assignment_oracle() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = EmbeddingTable::synthetic(["a", "b", "c", "d", "e", "f"], 4, 1);
    let mut failures = 0;
    for trial in 0..500 {
        let grid = [3, 5, 19][trial % 3];
        // Pixel lattice fine enough that every box edge sits on a pixel boundary.
        let res = grid * 8;
        let snap = |rng: &mut ChaCha8Rng| rng.random_range(0..=res) as f64 / res as f64;
        let n = rng.random_range(1..=4);
        let mut tokens = Vec::new();
        while tokens.len() < n {
            let (x0, x1, y0, y1) = (snap(&mut rng), snap(&mut rng), snap(&mut rng), snap(&mut rng));
            if x0 < x1 && y0 < y1 {
                tokens.push(OcrToken::new(["a", "b", "c", "d", "e", "f"][tokens.len()], BBox::new(x0, y0, x1, y1)).unwrap());
            }
        }
        for t in &tokens {
            if cells_for_box(&t.bbox, grid) != raster_cells(&t.bbox, grid, res) {
                failures += 1;
            }
        }
        // Replay: paint largest first, ties in input order, later writes win.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| tokens[j].bbox.area().partial_cmp(&tokens[i].bbox.area()).unwrap());
        let mut owner = vec![None; grid * grid];
        for &i in &order {
            for (r, c) in raster_cells(&tokens[i].bbox, grid, res) {
                owner[r * grid + c] = Some(i);
            }
        }
        let built = build_text_grid(&tokens, &table, grid);
        if built.cell_token != owner {
            failures += 1;
        }
        for (cell, o) in owner.iter().enumerate() {
            let expect = o.map_or(vec![0.0; 4], |i| table.embed(&tokens[i].text));
            if built.text_grid.row(cell) != expect.as_slice() {
                failures += 1;
            }
        }
    }
    let pass = failures == 0;
    report(5, "grid assignment oracle", pass, format!("{failures} mismatches over 500 random configurations"))
}

fn bce_analytic() -> bool {
    let p = Tensor::<f64>::full(&[38, 38], 0.5);
    let g = Tensor::from_fn(&[38, 38], |i| (i % 3 == 0) as u8 as f64);
    let e = bce_loss(&p, &g).unwrap();
    let expect = 1444.0 * std::f64::consts::LN_2;
    let rel = (e - expect).abs() / expect;
    let pass = rel <= 1e-6;
    report(6, "BCE analytic", pass, format!("loss {e:.6} vs 1444 ln 2 = {expect:.6}, relative error {rel:.1e}"))
}

fn multiscale_contract() -> bool {
    let run = trained(StackMode::Stacked, TrainConfig::default().seed);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    run.outcome.model.clone().save(&path).unwrap();
    let model = PointerModel::<f32>::load(&path).unwrap();

    let multi = generate(&SynthConfig {
        seed: SYNTH_SEED,
        count: 10,
        grid: GRID,
        extra_grids: vec![38, 76],
        ..SynthConfig::default()
    })
    .unwrap();
    let features = FeatureProvider::from_records(multi.features, GRID).unwrap();
    let table = EmbeddingTable::fixture();
    let providers = Providers {
        table: &table,
        features: &features,
    };
    let mut bad = Vec::new();
    for e in &multi.examples {
        let outs = predict_multiscale(&model, e, providers, &[19, 38, 76]).unwrap();
        for (o, g) in outs.iter().zip([19, 38, 76]) {
            let ok = o.p_att.shape() == [g, g] && o.p_att.data().iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0);
            if !ok {
                bad.push(format!("{} at G={g}", e.question_id));
            }
        }
    }
    let pass = bad.is_empty();
    report(
        7,
        "multi-scale contract",
        pass,
        format!("{} examples at G = 19, 38, 76 from one checkpoint; invalid maps: {bad:?}", multi.examples.len()),
    )
}

fn ensemble_semantics() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut inputs: Vec<EnsembleInput> = (0..500)
        .map(|i| EnsembleInput {
            question_id: format!("q{i}"),
            classifier_answer: format!("cls{i}"),
            classifier_confidence: rng.random_range(0.0..=1.0),
            pointer_answer: format!("ptr{i}"),
            pointer_confidence: rng.random_range(0.0..1.0),
        })
        .collect();
    for (i, c) in [0.0, 0.37, 1.0, 0.370_000_1, 0.369_999_9].into_iter().enumerate() {
        inputs[i].classifier_confidence = c;
    }
    let pick = |tau| ensemble_select(&inputs, tau).unwrap();
    let all_pointer = pick(1.0).iter().zip(&inputs).all(|(c, i)| c.answer == i.pointer_answer);
    let zero_ok = pick(0.0).iter().zip(&inputs).all(|(c, i)| {
        (i.classifier_confidence > 0.0) == (c.answer == i.classifier_answer && c.source == Source::Classifier)
    });
    let at_tau = pick(0.37);
    let switched: Vec<&str> = at_tau
        .iter()
        .filter(|c| c.source == Source::Classifier)
        .map(|c| c.question_id.as_str())
        .collect();
    let expected: Vec<&str> =
        inputs.iter().filter(|i| i.classifier_confidence > 0.37).map(|i| i.question_id.as_str()).collect();
    let pass = all_pointer && zero_ok && switched == expected;
    report(
        8,
        "ensemble semantics",
        pass,
        format!(
            "tau=1 all pointer: {all_pointer}; tau=0 classifier iff confidence > 0: {zero_ok}; tau=0.37 switched {} = expected {}",
            switched.len(),
            expected.len()
        ),
    )
}

fn determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let features = FeatureProvider::from_records(c.features.clone(), GRID).unwrap();
    let table = EmbeddingTable::fixture();
    let cfg = TrainConfig {
        epochs: 5,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let model = PointerModel::new(ModelConfig::default(), 11).unwrap();
        let mut out = train(model, &c.examples, &table, &features, &cfg).unwrap();
        let art = gridptr::model::train_to_dir(&mut out, &dir.path().join(name)).unwrap();
        files.push([art.final_checkpoint, art.best_checkpoint, art.log].map(|p| std::fs::read(p).unwrap()));
    }
    let same = files[0] == files[1];
    let records = checkpoint::decode(&files[0][0]).unwrap().len();
    report(
        9,
        "determinism",
        same,
        format!("two seeded runs: checkpoints ({records} records) and logs byte-identical: {same}"),
    )
}

fn main() {
    let checks: [fn() -> bool; 9] = [
        gradient_fidelity,
        synthetic_overfit,
        variant_ordering,
        metric_oracles,
        grid_assignment_oracle,
        bce_analytic,
        multiscale_contract,
        ensemble_semantics,
        determinism,
    ];
    let mut failed = 0;
    for (i, check) in checks.iter().enumerate() {
        // A panic counts as a failure of that check only.
        let pass = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| {
            println!("[FAIL] {} panicked", i + 1);
            false
        });
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
