//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs the full training ablations, so expect tens of
//! minutes on a single core.

mod common;

use std::collections::HashMap;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use polychain::augment::{build_training_set, chain_repeat, split, AugmentSpec, Sample, SplitSpec};
use polychain::eval::{sweep_eval, synth_corpus, ValuesOnly};
use polychain::gradcheck::run_gradcheck;
use polychain::model::Pooling;
use polychain::theory::{
    contract, hyperdegree_closed_form, prim_mst, tree_weight, verify_grad_sum,
    verify_latent_invariance, InvarianceConfig,
};
use polychain::train::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_max_tree, fixture_units, random_connected};

const CORPUS_SIZE: usize = 500;
const CORPUS_SEED: u64 = 0;
const ABLATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HIDDEN_DIM: usize = 64;
const MAX_EPOCHS: usize = 150;
const PATIENCE: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn graph_family() -> Outcome {
    let start = Instant::now();
    let units = fixture_units(50);
    let mut mismatches = 0;
    for ru in &units {
        for n in 1..=60 {
            let g = chain_repeat(ru, n);
            if g.num_nodes() != n * ru.atoms.len() || g.num_edges() != n * ru.bonds.len() + n - 1 {
                mismatches += 1;
            }
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && units.len() == 50 && within(t, 5.0),
        format!("{} units x n=1..60, {mismatches} mismatches, {:.2}s", units.len(), t.as_secs_f64()),
    )
}

fn hyperdegrees() -> Outcome {
    let mut mismatches = 0;
    let units = fixture_units(50);
    for ru in &units {
        for n in 1..=60 {
            match contract(&chain_repeat(ru, n)) {
                Ok(h) => {
                    let ok = h.hyperdegrees.len() == n
                        && h.hyperdegrees
                            .iter()
                            .enumerate()
                            .all(|(i, &d)| d == hyperdegree_closed_form(n, i + 1));
                    mismatches += usize::from(!ok);
                }
                Err(_) => mismatches += 1,
            }
        }
    }
    outcome(mismatches == 0, format!("{} units x n=1..60, {mismatches} mismatches", units.len()))
}

fn mst_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for i in 0..100 {
        let n = rng.gen_range(2..=7);
        let g = random_connected(&mut rng, n, i % 2 == 0);
        let root = rng.gen_range(0..n);
        let ok = prim_mst(&g, root)
            .map(|t| (tree_weight(&g, &t) - brute_force_max_tree(&g)).abs() <= 1e-9)
            .unwrap_or(false);
        mismatches += usize::from(!ok);
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && within(t, 30.0),
        format!("100 graphs, {mismatches} mismatches, {:.2}s", t.as_secs_f64()),
    )
}

fn gradient_check() -> Outcome {
    match run_gradcheck(0, 50, 1e-4) {
        Ok(r) => outcome(
            r.pass,
            format!("{} graphs, max rel error {:.2e}, {} above 1e-4", r.graphs, r.max_rel_error, r.failures),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn grad_sum() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    let mut failed = 0;
    for n in 3..=10 {
        for l in [0.1, 0.5, 0.9] {
            cells += 1;
            match verify_grad_sum(n, l, 1.0) {
                Ok(r) => {
                    worst = worst.max(r.rel_error);
                    failed += usize::from(!r.pass);
                }
                Err(_) => failed += 1,
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failed == 0 && cells == 24 && within(t, 10.0),
        format!("{cells} cells, worst rel error {worst:.2e}, {failed} failed, {:.2}s", t.as_secs_f64()),
    )
}

fn latent_invariance() -> Outcome {
    let start = Instant::now();
    let tests: Vec<usize> = (2..=100).collect();
    let mut passed = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let cfg = InvarianceConfig { seed, ..InvarianceConfig::default() };
        if let Ok((r, _)) = verify_latent_invariance(&[1, 3], &tests, 1e-2, &cfg) {
            worst = worst.max(r.max_deviation);
            passed += usize::from(r.pass && r.train_loss <= 1e-6);
        }
    }
    let t = start.elapsed();
    outcome(
        passed >= 8 && within(t, 120.0),
        format!("{passed}/10 seeds within 1e-2, worst deviation {worst:.2e}, {:.1}s", t.as_secs_f64()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RunKey {
    max_size: usize,
    ratio_pct: u32,
    aggregator: Pooling,
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct RunResult {
    test1: f64,
    test60: f64,
    secs: f64,
}

struct Lab {
    train_base: Vec<Sample>,
    valid_base: Vec<Sample>,
    test_base: Vec<Sample>,
    runs: HashMap<RunKey, Result<RunResult, String>>,
}

impl Lab {
    fn new() -> Self {
        let corpus = synth_corpus(CORPUS_SIZE, CORPUS_SEED);
        let (train_base, valid_base, test_base) = split(&corpus, &SplitSpec::with_seed(CORPUS_SEED)).unwrap();
        Self { train_base, valid_base, test_base, runs: HashMap::new() }
    }

    fn run(&mut self, key: RunKey) -> Result<RunResult, String> {
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let start = Instant::now();
        let result = (|| {
            let spec = AugmentSpec::new(vec![1, key.max_size], key.ratio_pct as f64 / 100.0, key.seed)
                .map_err(|e| e.to_string())?;
            let train_set = build_training_set(&self.train_base, &spec).map_err(|e| e.to_string())?;
            let valid_set = build_training_set(&self.valid_base, &spec).map_err(|e| e.to_string())?;
            let cfg = TrainConfig {
                hidden_dim: HIDDEN_DIM,
                num_layers: 3,
                max_epochs: MAX_EPOCHS,
                patience: PATIENCE,
                seed: key.seed,
                aggregator: key.aggregator,
                readout: Pooling::Max,
                ..TrainConfig::default()
            };
            let out = train(&train_set, &valid_set, &cfg).map_err(|e| e.to_string())?;
            let report = sweep_eval(&ValuesOnly(&out.params), &self.test_base, &[1, 60], key.seed, serde_json::Value::Null)
                .map_err(|e| e.to_string())?;
            Ok(RunResult {
                test1: report.at(1).unwrap().r2,
                test60: report.at(60).unwrap().r2,
                secs: start.elapsed().as_secs_f64(),
            })
        })();
        match &result {
            Ok(r) => println!(
                "  run sizes={{1,{}}} ratio={:.1} agg={} seed={}: Test1 R2 {:.4}, Test60 R2 {:.4}, {:.0}s",
                key.max_size,
                key.ratio_pct as f64 / 100.0,
                key.aggregator,
                key.seed,
                r.test1,
                r.test60,
                r.secs
            ),
            Err(e) => println!("  run {key:?} failed: {e}"),
        }
        self.runs.insert(key, result.clone());
        result
    }

    /// Seed-averaged Test60 R² over the ablation seeds.
    fn mean_test60(&mut self, max_size: usize, ratio_pct: u32, aggregator: Pooling) -> Result<f64, String> {
        let mut total = 0.0;
        for seed in ABLATION_SEEDS {
            total += self.run(RunKey { max_size, ratio_pct, aggregator, seed })?.test60;
        }
        Ok(total / ABLATION_SEEDS.len() as f64)
    }
}

fn at_scale(lab: &mut Lab) -> Outcome {
    let key = RunKey { max_size: 3, ratio_pct: 100, aggregator: Pooling::Max, seed: ABLATION_SEEDS[0] };
    match lab.run(key) {
        Ok(r) => {
            let gap = r.test1 - r.test60;
            outcome(
                r.test1 >= 0.95 && gap.abs() <= 0.03 && r.secs < 900.0,
                format!("Test1 R2 {:.4}, Test60 R2 {:.4}, gap {:+.4}, {:.0}s", r.test1, r.test60, gap, r.secs),
            )
        }
        Err(e) => outcome(false, e),
    }
}

fn minimal_merge(lab: &mut Lab) -> Outcome {
    let result = (|| {
        let two = lab.mean_test60(2, 100, Pooling::Max)?;
        let three = lab.mean_test60(3, 100, Pooling::Max)?;
        let four = lab.mean_test60(4, 100, Pooling::Max)?;
        Ok::<_, String>((two, three, four))
    })();
    match result {
        Ok((two, three, four)) => outcome(
            three >= two && (four - three).abs() <= 0.01,
            format!("mean Test60 R2 {{1,2}} {two:.4}, {{1,3}} {three:.4}, {{1,4}} {four:.4}"),
        ),
        Err(e) => outcome(false, e),
    }
}

fn merge_ratio(lab: &mut Lab) -> Outcome {
    let result = (|| Ok::<_, String>((lab.mean_test60(3, 100, Pooling::Max)?, lab.mean_test60(3, 80, Pooling::Max)?)))();
    match result {
        Ok((full, partial)) => outcome(
            full >= partial,
            format!("mean Test60 R2 ratio 1.0 {full:.4}, ratio 0.8 {partial:.4}"),
        ),
        Err(e) => outcome(false, e),
    }
}

fn aggregators(lab: &mut Lab) -> Outcome {
    let result = (|| {
        Ok::<_, String>((
            lab.mean_test60(3, 100, Pooling::Max)?,
            lab.mean_test60(3, 100, Pooling::Mean)?,
            lab.mean_test60(3, 100, Pooling::Sum)?,
        ))
    })();
    match result {
        Ok((max, mean, sum)) => outcome(
            max >= mean && mean >= sum,
            format!("mean Test60 R2 max {max:.4}, mean {mean:.4}, sum {sum:.4}"),
        ),
        Err(e) => outcome(false, e),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let bin = env!("CARGO_BIN_EXE_polychain");
    let run = |args: &[&str]| Command::new(bin).args(args).output().map_err(|e| e.to_string());
    let result = (|| {
        run(&["synth", "--count", "80", "--seed", "9", "--out", &path("corpus.csv")])?;
        run(&["augment", "--input", &path("corpus.csv"), "--split", "--seed", "9", "--out", &path("data")])?;
        fs::write(path("cfg.toml"), "hidden_dim = 16\nmax_epochs = 12\npatience = 12\nseed = 5\n")
            .map_err(|e| e.to_string())?;
        let mut hashes = Vec::new();
        let mut checkpoints = Vec::new();
        for tag in ["a", "b"] {
            let out = run(&[
                "train", "--data", &path("data.train.jsonl"), "--valid", &path("data.valid.jsonl"),
                "--cfg", &path("cfg.toml"), "--out", &path(&format!("{tag}.json")), "--quiet",
            ])?;
            if !out.status.success() {
                return Err(String::from_utf8_lossy(&out.stderr).into_owned());
            }
            let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
            hashes.push(stdout.lines().find(|l| l.starts_with("history_hash=")).unwrap_or("").to_owned());
            checkpoints.push(fs::read(path(&format!("{tag}.json"))).map_err(|e| e.to_string())?);
        }
        Ok((hashes, checkpoints))
    })();
    match result {
        Ok((h, c)) => outcome(
            !h[0].is_empty() && h[0] == h[1] && c[0] == c[1],
            format!("{}, checkpoints {}", h[0], if c[0] == c[1] { "identical" } else { "differ" }),
        ),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let mut lab = Lab::new();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Lab) -> Outcome>)> = vec![
        ("graph-family identity", Box::new(|_| graph_family())),
        ("hyperdegree closed form", Box::new(|_| hyperdegrees())),
        ("mst oracle", Box::new(|_| mst_oracle())),
        ("gradient correctness", Box::new(|_| gradient_check())),
        ("accumulated gradient norm", Box::new(|_| grad_sum())),
        ("latent repetition-invariance", Box::new(|_| latent_invariance())),
        ("determinism", Box::new(|_| determinism())),
        ("repetition-invariance at scale", Box::new(at_scale)),
        ("minimal-merge ablation", Box::new(minimal_merge)),
        ("merge-ratio ablation", Box::new(merge_ratio)),
        ("aggregator ablation", Box::new(aggregators)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check(&mut lab);
        failed += usize::from(!o.pass);
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
