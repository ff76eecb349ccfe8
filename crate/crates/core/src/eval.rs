//! Metrics, repeat-size sweeps, CSV ingestion and the synthetic corpus.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::augment::{chain_repeat, Sample};
use crate::graph::PolymerGraph;
use crate::model::{cosine_similarity, forward, ModelError, ModelParams};
use crate::smiles::{canonical_text, parse_repeat_unit, BondOrder, Element, RepeatUnit};
use crate::train::predict;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("R² is undefined: all targets are identical")]
    Degenerate,
    #[error("length mismatch: {0} targets, {1} predictions")]
    Length(usize, usize),
    #[error("no samples")]
    Empty,
    #[error("repeat size must be positive")]
    BadSize,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header 'smiles,value', found '{0}'")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
}

/// `rmse = sqrt(mean squared error)`, `r2 = 1 − SS_res / SS_tot`.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Length(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::Degenerate);
    }
    Ok(Metrics {
        r2: 1.0 - ss_res / ss_tot,
        rmse: (ss_res / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub embedding: Option<Vec<f64>>,
}

/// Anything that maps graphs to scalar predictions.
pub trait Predictor {
    fn predict(&self, graphs: &[PolymerGraph]) -> Result<Vec<Prediction>, EvalError>;
}

impl Predictor for ModelParams {
    fn predict(&self, graphs: &[PolymerGraph]) -> Result<Vec<Prediction>, EvalError> {
        graphs
            .iter()
            .map(|g| {
                let e = forward(g, self, self.config.aggregator)?;
                Ok(Prediction {
                    value: e.prediction,
                    embedding: Some(e.graph_embedding),
                })
            })
            .collect()
    }
}

/// Prediction-only adapter that skips embedding extraction.
pub struct ValuesOnly<'a>(pub &'a ModelParams);

impl Predictor for ValuesOnly<'_> {
    fn predict(&self, graphs: &[PolymerGraph]) -> Result<Vec<Prediction>, EvalError> {
        Ok(predict(self.0, graphs)?
            .into_iter()
            .map(|value| Prediction {
                value,
                embedding: None,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    pub count: usize,
    /// Mean cosine similarity of graph embeddings at `n` to those at `n = 1`.
    pub embedding_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sizes: Vec<SizeReport>,
    /// R² at the smallest size minus R² at the largest.
    pub r2_gap: f64,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn at(&self, n: usize) -> Option<&SizeReport> {
        self.sizes.iter().find(|s| s.n == n)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,r2,rmse,count,embedding_drift\n");
        for r in &self.sizes {
            let drift = r.embedding_drift.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.n, r.r2, r.rmse, r.count, drift));
        }
        s
    }
}

pub const DEFAULT_SWEEP: [usize; 4] = [1, 5, 10, 60];

/// Builds `G^(n)` for every test sample and size, predicts and scores.
pub fn sweep_eval(
    model: &dyn Predictor,
    test_base: &[Sample],
    sizes: &[usize],
    seed: u64,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if test_base.is_empty() || sizes.is_empty() {
        return Err(EvalError::Empty);
    }
    if sizes.contains(&0) {
        return Err(EvalError::BadSize);
    }
    let y: Vec<f64> = test_base.iter().map(|s| s.value).collect();
    let build = |n: usize| -> Vec<PolymerGraph> {
        test_base.iter().map(|s| chain_repeat(&s.unit, n)).collect()
    };
    let base = model.predict(&build(1))?;
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let preds = if n == 1 { base.clone() } else { model.predict(&build(n))? };
        let values: Vec<f64> = preds.iter().map(|p| p.value).collect();
        let m = metrics(&y, &values)?;
        let drift = preds
            .iter()
            .zip(&base)
            .map(|(p, b)| match (&p.embedding, &b.embedding) {
                (Some(e), Some(e1)) => Some(cosine_similarity(e, e1)),
                _ => None,
            })
            .collect::<Option<Vec<f64>>>()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64);
        out.push(SizeReport {
            n,
            r2: m.r2,
            rmse: m.rmse,
            count: values.len(),
            embedding_drift: drift,
        });
    }
    let r2_gap = out.first().unwrap().r2 - out.last().unwrap().r2;
    Ok(EvalReport {
        sizes: out,
        r2_gap,
        seed,
        config,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the file, header included.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub samples: Vec<Sample>,
    pub errors: Vec<RowError>,
}

pub fn ingest_csv(path: &Path) -> Result<Ingested, EvalError> {
    let text = std::fs::read_to_string(path)?;
    ingest_csv_str(&text)
}

/// Parses `smiles,value` rows; malformed rows are listed, valid rows kept.
pub fn ingest_csv_str(text: &str) -> Result<Ingested, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "smiles" || &header[1] != "value" {
        return Err(EvalError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Ingested::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            out.errors.push(RowError {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
            continue;
        }
        let value = match rec[1].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                out.errors.push(RowError {
                    line,
                    message: format!("invalid value '{}'", &rec[1]),
                });
                continue;
            }
        };
        match parse_repeat_unit(&rec[0]) {
            Ok(unit) => out.samples.push(Sample { unit, value }),
            Err(e) => out.errors.push(RowError {
                line,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_samples_csv<W: std::io::Write>(w: W, samples: &[Sample]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["smiles", "value"])?;
    for s in samples {
        wr.write_record([s.unit.source_text.as_str(), &s.value.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// `10·#C + 25·#O + 40·#(O=X double bonds)` over one unit.
pub fn synthetic_label(ru: &RepeatUnit) -> f64 {
    let c = ru.count_element(Element::C) as f64;
    let o = ru.count_element(Element::O) as f64;
    let carbonyl = ru
        .bonds
        .iter()
        .filter(|b| {
            b.order == BondOrder::Double
                && (ru.atoms[b.a].element == Element::O || ru.atoms[b.b].element == Element::O)
        })
        .count() as f64;
    10.0 * c + 25.0 * o + 40.0 * carbonyl
}

const MAX_HEAVY: usize = 8;
const MAX_BACKBONE: usize = 3;

/// Substituent SMILES, heavy-atom count and valence it consumes.
const BRANCHES: [(&str, usize, u32); 7] = [
    ("C", 1, 1),
    ("O", 1, 1),
    ("=O", 1, 2),
    ("N", 1, 1),
    ("CC", 2, 1),
    ("OC", 2, 1),
    ("C#N", 2, 1),
];

fn random_unit_text(rng: &mut ChaCha8Rng) -> String {
    loop {
        let len = rng.gen_range(1..=MAX_BACKBONE);
        let mut heavy = 0;
        let mut text = String::from("*");
        for _ in 0..len {
            let (sym, free) = match rng.gen_range(0..10) {
                0..=5 => ("C", 2u32),
                6..=7 => ("O", 0),
                _ => ("N", 1),
            };
            text.push_str(sym);
            heavy += 1;
            let mut free = free;
            while free > 0 && rng.gen_bool(0.45) {
                let (b, atoms, val) = BRANCHES[rng.gen_range(0..BRANCHES.len())];
                if val > free || (b == "=O" && sym != "C") {
                    continue;
                }
                text.push('(');
                text.push_str(b);
                text.push(')');
                heavy += atoms;
                free -= val;
            }
        }
        text.push('*');
        if (2..=MAX_HEAVY).contains(&heavy) {
            return text;
        }
    }
}

/// Distinct random repeat units with the composition label; deterministic
/// per seed.
pub fn synth_corpus(count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        let text = random_unit_text(&mut rng);
        let unit = parse_repeat_unit(&text).expect("generated units are valid");
        // structure space is finite; allow repeats once it is exhausted
        if !seen.insert(canonical_text(&unit)) && attempts < 50 * count {
            continue;
        }
        let value = synthetic_label(&unit);
        out.push(Sample { unit, value });
    }
    out
}
