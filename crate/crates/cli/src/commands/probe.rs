use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use sensevar::probe::{
    build_pair_dataset_with, eval_probe, train_features, DatasetSizes, DenseFeatures, ProbeConfig, ProbeKind,
    ProbeModel, ProbePairDataset,
};
use sensevar::EmbeddingStore;
use serde::Serialize;

use super::{require, Ctx};
use crate::args::{InputArgs, LayerList};
use crate::output::{display, f, Table};

#[derive(Args, Debug, Serialize)]
pub struct ProbeTrainCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "last")]
    pub layers: LayerList,
    /// Probe kinds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "linear,mlp")]
    pub kind: Vec<ProbeKind>,
    #[arg(long, default_value_t = DatasetSizes::default().train)]
    pub train_size: usize,
    #[arg(long, default_value_t = DatasetSizes::default().eval)]
    pub eval_size: usize,
    /// Share of negatives drawn from same-word, different-sense pairs.
    #[arg(long, default_value_t = 0.5)]
    pub hard_negatives: f64,
    #[arg(long, default_value_t = ProbeConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = ProbeConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = ProbeConfig::default().batch)]
    pub batch: usize,
    #[arg(long, default_value_t = ProbeConfig::default().hidden_size)]
    pub hidden: usize,
}

#[derive(Serialize)]
struct ProbeRow {
    kind: ProbeKind,
    layer: u32,
    n_train: usize,
    n_eval: usize,
    train_accuracy: f64,
    eval_accuracy: f64,
    checkpoint: String,
}

const DATASET_FILE: &str = "probe_dataset.json";

pub fn train(ctx: &mut Ctx, a: &ProbeTrainCmd) -> Result<String> {
    require(a.input.paths())?;
    let (c, store) = a.input.load()?;
    let layers = a.layers.resolve(&store)?;
    let sizes = DatasetSizes { train: a.train_size, eval: a.eval_size };
    let ds = build_pair_dataset_with(&c, &store, sizes, ctx.seed, a.hard_negatives)?;
    ctx.out.artifact(DATASET_FILE, &ds)?;
    let config = ProbeConfig { lr: a.lr, epochs: a.epochs, batch: a.batch, hidden_size: a.hidden, seed: ctx.seed };
    let mut rows = Vec::new();
    for &layer in &layers {
        let train = DenseFeatures::from_pairs(&store, &ds.train, layer)?;
        let eval = DenseFeatures::from_pairs(&store, &ds.eval, layer)?;
        for &kind in &a.kind {
            let model = train_features(&train, kind, config, layer)?;
            let name = format!("probe_{kind}_L{layer}.sprb");
            ctx.out.bytes(&name, &model.to_bytes())?;
            rows.push(ProbeRow {
                kind,
                layer,
                n_train: train.len(),
                n_eval: eval.len(),
                train_accuracy: model.accuracy(&train)?,
                eval_accuracy: model.accuracy(&eval)?,
                checkpoint: name,
            });
        }
    }
    let mut t = Table::new(&["kind", "layer", "n_train", "n_eval", "train_accuracy", "eval_accuracy", "checkpoint"]);
    for r in &rows {
        t.push(vec![
            r.kind.to_string(),
            r.layer.to_string(),
            r.n_train.to_string(),
            r.n_eval.to_string(),
            f(r.train_accuracy),
            f(r.eval_accuracy),
            r.checkpoint.clone(),
        ]);
    }
    let summary =
        rows.iter().map(|r| format!("{} L{}: {:.4}", r.kind, r.layer, r.eval_accuracy)).collect::<Vec<_>>().join(", ");
    ctx.report("probe_train", "probe-train", a, &rows, &t)?;
    Ok(format!("eval accuracy {summary}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Args, Debug, Serialize)]
pub struct ProbeEvalCmd {
    /// Probe checkpoints; repeatable.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Pair dataset written by probe-train.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Eval)]
    pub split: Split,
}

#[derive(Serialize)]
struct EvalRow {
    checkpoint: String,
    kind: ProbeKind,
    layer: u32,
    n: usize,
    accuracy: f64,
}

pub fn eval(ctx: &mut Ctx, a: &ProbeEvalCmd) -> Result<String> {
    require(a.checkpoint.iter().chain([&a.dataset, &a.store]))?;
    let text = std::fs::read_to_string(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    let ds: ProbePairDataset =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.dataset.display()))?;
    let store = EmbeddingStore::open(&a.store).with_context(|| format!("opening {}", a.store.display()))?;
    if store.manifest().corpus_fingerprint != ds.corpus_fingerprint {
        bail!("dataset {} was built from a different corpus than store {}", a.dataset.display(), a.store.display());
    }
    let pairs = match a.split {
        Split::Train => &ds.train,
        Split::Eval => &ds.eval,
    };
    let mut rows = Vec::new();
    for path in &a.checkpoint {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let model = ProbeModel::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
        let accuracy = eval_probe(&model, pairs, &store)?;
        rows.push(EvalRow {
            checkpoint: display(path),
            kind: model.kind,
            layer: model.layer,
            n: pairs.len(),
            accuracy,
        });
    }
    let mut t = Table::new(&["checkpoint", "kind", "layer", "n", "accuracy"]);
    for r in &rows {
        t.push(vec![r.checkpoint.clone(), r.kind.to_string(), r.layer.to_string(), r.n.to_string(), f(r.accuracy)]);
    }
    let summary = rows.iter().map(|r| format!("{} L{}: {:.4}", r.kind, r.layer, r.accuracy)).collect::<Vec<_>>();
    ctx.report("probe_eval", "probe-eval", a, &rows, &t)?;
    Ok(summary.join(", "))
}
