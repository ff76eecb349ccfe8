use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use polychain::augment::{build_training_set, split, AugmentSpec, SplitSpec};
use polychain::eval::{ingest_csv, sweep_eval, synth_corpus, write_samples_csv, DEFAULT_SWEEP};
use polychain::gradcheck::run_gradcheck;
use polychain::graph::{read_jsonl, write_jsonl};
use polychain::model::{embed_family, ModelParams};
use polychain::smiles::parse_repeat_unit;
use polychain::theory::{
    prim_mst, tree_weight, verify_grad_sum, verify_latent_invariance, InvarianceConfig,
    WeightedGraph,
};
use polychain::train::{train_with_observer, TrainConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "polychain", version, about = "Repeat-unit polymer graphs and property models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chain repeat units from a `smiles,value` CSV into labeled JSONL graphs
    Augment {
        #[arg(long)]
        input: PathBuf,
        /// Repeat sizes, comma separated; must start at 1
        #[arg(long, default_value = "1,3", value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Fraction of samples chained at each size above 1
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSONL; with --split, the stem for `.train.jsonl`,
        /// `.valid.jsonl` and `.test.csv`
        #[arg(long)]
        out: PathBuf,
        /// Split base samples 60/10/30 before augmenting
        #[arg(long)]
        split: bool,
    },
    /// Train a model on labeled JSONL graphs
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation graphs; the training set is reused when omitted
        #[arg(long)]
        valid: Option<PathBuf>,
        /// TOML training config; defaults apply to missing keys
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// History CSV path; defaults to `<out>.history.csv`
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on a `smiles,value` CSV across repeat sizes
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// JSON report; a `.csv` extension writes the per-size table instead
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export graph embeddings of one repeat unit at several sizes
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ru: String,
        #[arg(long, default_value = "1,3,60", value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a theory check and write a JSON report
    VerifyTheory {
        #[arg(long, value_parser = ["invariance", "gradsum", "mst"])]
        prop: String,
        /// `key=value` settings, e.g. `n=5 l=0.5 delta=1`
        #[arg(long, num_args = 0..)]
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum spanning tree of a `u,v,w` edge CSV
    Mst {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of model gradients on random graphs
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        graphs: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic `smiles,value` corpus
    Synth {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Check(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(m)) => {
            eprintln!("FAIL: {m}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Augment {
            input,
            sizes,
            ratio,
            seed,
            out,
            split: do_split,
        } => augment(&input, sizes, ratio, seed, &out, do_split),
        Command::Train {
            data,
            valid,
            cfg,
            out,
            history,
            quiet,
        } => train_cmd(&data, valid.as_deref(), cfg.as_deref(), &out, history, quiet),
        Command::Eval {
            model,
            data,
            sizes,
            out,
        } => eval_cmd(&model, &data, sizes, out.as_deref()),
        Command::Embed {
            model,
            ru,
            sizes,
            out,
        } => embed_cmd(&model, &ru, &sizes, out.as_deref()),
        Command::VerifyTheory { prop, params, out } => verify_theory(&prop, &params, out.as_deref()),
        Command::Mst { input, start, out } => mst_cmd(&input, start, out.as_deref()),
        Command::Gradcheck {
            seed,
            graphs,
            tol,
            out,
        } => {
            if !(tol >= 0.0) || graphs == 0 {
                return Err(Failure::Usage("--tol must be non-negative and --graphs positive".into()));
            }
            let report = run_gradcheck(seed, graphs, tol)?;
            emit_json(&report, out.as_deref())?;
            println!(
                "gradcheck: {} graphs, max relative error {:.3e}, {} failures",
                report.graphs, report.max_rel_error, report.failures
            );
            check(report.pass, "gradient mismatch above tolerance")
        }
        Command::Synth { count, seed, out } => {
            let corpus = synth_corpus(count, seed);
            write_samples_csv(BufWriter::new(File::create(&out)?), &corpus)?;
            println!("wrote {} samples to {}", corpus.len(), out.display());
            Ok(())
        }
    }
}

fn check(pass: bool, msg: &str) -> CliResult {
    if pass {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::Check(msg.to_string()))
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<polychain::Sample>, Failure> {
    let ingested = ingest_csv(path)?;
    for e in &ingested.errors {
        eprintln!("{}:{}: {}", path.display(), e.line, e.message);
    }
    if !ingested.errors.is_empty() {
        eprintln!("{} malformed rows skipped", ingested.errors.len());
    }
    Ok(ingested.samples)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn augment(input: &Path, sizes: Vec<usize>, ratio: f64, seed: u64, out: &Path, do_split: bool) -> CliResult {
    let spec = AugmentSpec::new(sizes, ratio, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let samples = load_samples(input)?;
    let write = |path: &Path, graphs: &[polychain::PolymerGraph]| -> CliResult {
        write_jsonl(BufWriter::new(File::create(path)?), graphs)?;
        println!("wrote {} graphs to {}", graphs.len(), path.display());
        Ok(())
    };
    if do_split {
        let stem = out.with_extension("");
        let (tr, va, te) = split(&samples, &SplitSpec::with_seed(seed))?;
        write(&with_suffix(&stem, ".train.jsonl"), &build_training_set(&tr, &spec)?)?;
        write(&with_suffix(&stem, ".valid.jsonl"), &build_training_set(&va, &spec)?)?;
        let test_path = with_suffix(&stem, ".test.csv");
        write_samples_csv(BufWriter::new(File::create(&test_path)?), &te)?;
        println!("wrote {} test samples to {}", te.len(), test_path.display());
        Ok(())
    } else {
        write(out, &build_training_set(&samples, &spec)?)
    }
}

fn read_graphs(path: &Path) -> Result<Vec<polychain::PolymerGraph>, Failure> {
    Ok(read_jsonl(BufReader::new(File::open(path)?))?)
}

fn train_cmd(
    data: &Path,
    valid: Option<&Path>,
    cfg: Option<&Path>,
    out: &Path,
    history: Option<PathBuf>,
    quiet: bool,
) -> CliResult {
    let cfg = match cfg {
        Some(p) => TrainConfig::from_toml(&fs::read_to_string(p)?)
            .map_err(|e| Failure::Usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    let train_set = read_graphs(data)?;
    let valid_set = match valid {
        Some(p) => read_graphs(p)?,
        None => {
            eprintln!("warning: no --valid given; early stopping on the training set");
            train_set.clone()
        }
    };
    let outcome = train_with_observer(&train_set, &valid_set, &cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  task {:.6}  l1 {:.3}  valid_rmse {:.4}",
                r.epoch, r.task_loss, r.l1_term, r.valid_rmse
            );
        }
    })?;
    fs::write(out, outcome.params.to_json())?;
    let history_path = history.unwrap_or_else(|| with_suffix(out, ".history.csv"));
    fs::write(&history_path, outcome.history.to_csv())?;
    println!("best_epoch={}", outcome.history.best_epoch);
    println!("best_valid_rmse={}", outcome.history.best_valid_rmse);
    println!("history_hash={}", outcome.history.hash());
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    Ok(ModelParams::from_json(&fs::read_to_string(path)?)?)
}

fn eval_cmd(model: &Path, data: &Path, sizes: Option<Vec<usize>>, out: Option<&Path>) -> CliResult {
    let params = load_model(model)?;
    let samples = load_samples(data)?;
    let sizes = sizes.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    let config = serde_json::json!({
        "checkpoint": model.display().to_string(),
        "model": params.to_checkpoint().config,
        "sizes": sizes,
    });
    let report = sweep_eval(&params, &samples, &sizes, params.config.seed, config)?;
    match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => fs::write(p, report.to_csv())?,
        _ => emit_json(&report, out)?,
    }
    for s in &report.sizes {
        eprintln!("n={:<4} r2={:.4} rmse={:.4} count={}", s.n, s.r2, s.rmse, s.count);
    }
    eprintln!("r2_gap={:.4}", report.r2_gap);
    Ok(())
}

fn embed_cmd(model: &Path, ru: &str, sizes: &[usize], out: Option<&Path>) -> CliResult {
    let params = load_model(model)?;
    let unit = parse_repeat_unit(ru).map_err(|e| Failure::Usage(e.to_string()))?;
    let family = embed_family(&unit, sizes, &params)?;
    let mut text = String::from("n,cosine_to_single");
    for j in 0..params.hidden_dim() {
        text.push_str(&format!(",h{j}"));
    }
    text.push('\n');
    for ((n, e), c) in family.sizes.iter().zip(&family.embeddings).zip(&family.cosine_to_single) {
        text.push_str(&format!("{n},{c}"));
        for x in &e.graph_embedding {
            text.push_str(&format!(",{x}"));
        }
        text.push('\n');
    }
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

struct Params(BTreeMap<String, String>);

impl Params {
    fn parse(raw: &[String]) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        for item in raw {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("expected key=value, got '{item}'")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, Failure> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid value '{v}' for {key}"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>, Failure> {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Failure::Usage(format!("invalid value '{x}' for {key}")))
                })
                .collect(),
        }
    }

    fn finish(self) -> CliResult {
        match self.0.keys().next() {
            Some(k) => Err(Failure::Usage(format!("unknown parameter '{k}'"))),
            None => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct TheoryReport<T: Serialize> {
    prop: String,
    pass: bool,
    cases: Vec<T>,
}

fn verify_theory(prop: &str, raw: &[String], out: Option<&Path>) -> CliResult {
    let mut p = Params::parse(raw)?;
    match prop {
        "gradsum" => {
            let ns = p.list("n", (3..=10).collect())?;
            let ls = p.list("l", vec![0.1, 0.5, 0.9])?;
            let delta = p.get("delta", 1.0)?;
            p.finish()?;
            let mut cases = Vec::new();
            for &n in &ns {
                for &l in &ls {
                    cases.push(verify_grad_sum(n, l, delta).map_err(|e| Failure::Usage(e.to_string()))?);
                }
            }
            let pass = cases.iter().all(|c| c.pass);
            emit_json(&TheoryReport { prop: prop.into(), pass, cases }, out)?;
            check(pass, "measured gradient sum differs from the closed form")
        }
        "invariance" => {
            let seeds: u64 = p.get("seeds", 10)?;
            let train = p.list("train", vec![1usize, 3])?;
            let m_max: usize = p.get("m_max", 100)?;
            let tol = p.get("tol", 1e-2)?;
            let required: u64 = p.get("required", (seeds * 4).div_ceil(5))?;
            let defaults = InvarianceConfig::default();
            let base = InvarianceConfig {
                dim: p.get("dim", defaults.dim)?,
                layers: p.get("layers", defaults.layers)?,
                target: p.get("target", defaults.target)?,
                l1_weight: p.get("l1", defaults.l1_weight)?,
                ..defaults
            };
            p.finish()?;
            let tests: Vec<usize> = (2..=m_max).collect();
            let mut cases = Vec::new();
            for seed in 0..seeds {
                let cfg = InvarianceConfig { seed, ..base.clone() };
                match verify_latent_invariance(&train, &tests, tol, &cfg) {
                    Ok((r, _)) => cases.push(serde_json::to_value(r)?),
                    Err(e) => cases.push(serde_json::json!({ "seed": seed, "pass": false, "error": e.to_string() })),
                }
            }
            let passed = cases.iter().filter(|c| c["pass"] == true).count() as u64;
            let pass = passed >= required;
            emit_json(&TheoryReport { prop: prop.into(), pass, cases }, out)?;
            eprintln!("{passed}/{seeds} seeds within tolerance");
            check(pass, "too few seeds reached invariance")
        }
        "mst" => {
            let graphs: usize = p.get("graphs", 100)?;
            let max_nodes: usize = p.get("max_nodes", 7)?;
            let seed: u64 = p.get("seed", 0)?;
            p.finish()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cases = Vec::new();
            for _ in 0..graphs {
                let g = random_connected(&mut rng, max_nodes);
                let tree = prim_mst(&g, 0)?;
                let prim = tree_weight(&g, &tree);
                let best = brute_force_max_tree(&g);
                cases.push(serde_json::json!({
                    "nodes": g.num_nodes(),
                    "edges": g.num_edges(),
                    "prim_weight": prim,
                    "enumerated_weight": best,
                    "pass": (prim - best).abs() <= 1e-9 * best.max(1.0),
                }));
            }
            let pass = cases.iter().all(|c| c["pass"] == true);
            emit_json(&TheoryReport { prop: prop.into(), pass, cases }, out)?;
            check(pass, "spanning tree weight mismatch")
        }
        other => Err(Failure::Usage(format!("unknown property '{other}'"))),
    }
}

fn random_connected(rng: &mut ChaCha8Rng, max_nodes: usize) -> WeightedGraph {
    let n = rng.gen_range(2..=max_nodes.max(2));
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v, rng.gen_range(0.1..10.0)));
    }
    for u in 0..n {
        for v in u + 1..n {
            if !edges.iter().any(|&(a, b, _)| (a, b) == (u, v)) && rng.gen_bool(0.4) {
                edges.push((u, v, rng.gen_range(0.1..10.0)));
            }
        }
    }
    WeightedGraph::new(n, &edges).expect("generated graph is valid")
}

/// Maximum weight over all (n−1)-edge subsets that form a spanning tree.
fn brute_force_max_tree(g: &WeightedGraph) -> f64 {
    let edges: Vec<(usize, usize, f64)> = g.edges().collect();
    let n = g.num_nodes();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1 << edges.len()) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                p[x] = find(p, p[x]);
            }
            p[x]
        }
        let mut ok = true;
        let mut w = 0.0;
        for (i, &(u, v, wt)) in edges.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a == b {
                ok = false;
                break;
            }
            parent[a] = b;
            w += wt;
        }
        if ok {
            best = best.max(w);
        }
    }
    best
}

fn mst_cmd(input: &Path, start: usize, out: Option<&Path>) -> CliResult {
    let g = WeightedGraph::from_csv(&fs::read_to_string(input)?)?;
    let tree = prim_mst(&g, start)?;
    #[derive(Serialize)]
    struct Tree {
        edges: Vec<(usize, usize)>,
        weight: f64,
    }
    let weight = tree_weight(&g, &tree);
    emit_json(&Tree { edges: tree, weight }, out)?;
    let _ = std::io::stdout().flush();
    Ok(())
}
