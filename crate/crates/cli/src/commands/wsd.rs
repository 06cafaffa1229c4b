use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use sensevar::bias::PromptedCorpusMap;
use sensevar::wsd::{
    evaluate, fit_threshold, wic_to_corpus, with_deltas, ConditionReport, ThresholdModel, WicInstance, WicReport,
    WicSource, WIC_REPORT_SCHEMA_VERSION,
};
use sensevar::EmbeddingStore;
use serde::{Deserialize, Serialize};

use super::corpus::WicFiles;
use super::{require, Ctx};
use crate::args::{LayerList, PromptedInput};
use crate::output::{f, num, Table};

const ORIGINAL: &str = "original";
const THRESHOLDS_FILE: &str = "wsd_thresholds.json";

#[derive(Args, Debug, Serialize)]
pub struct WsdSources {
    #[command(flatten)]
    pub files: WicFiles,
    /// Store extracted from the split's corpus (see wsd-corpus).
    #[arg(long)]
    pub store: PathBuf,
    /// Store of a prompted copy and its map, as `STORE=MAP`; repeatable.
    #[arg(long)]
    pub prompted: Vec<PromptedInput>,
}

struct Loaded {
    instances: Vec<WicInstance>,
    store: EmbeddingStore,
    prompted: Vec<(EmbeddingStore, PromptedCorpusMap)>,
}

impl Loaded {
    fn source(&self, condition: &str) -> Option<WicSource<'_>> {
        if condition == ORIGINAL {
            return Some(WicSource::plain(&self.store));
        }
        self.prompted.iter().find(|(_, m)| m.prompt_id == condition).map(|(s, m)| WicSource::prompted(s, m))
    }

    fn conditions(&self) -> Vec<String> {
        std::iter::once(ORIGINAL.to_string()).chain(self.prompted.iter().map(|(_, m)| m.prompt_id.clone())).collect()
    }
}

impl WsdSources {
    fn require(&self) -> Result<()> {
        let extra = self.prompted.iter().flat_map(|p| [&p.store, &p.map]);
        require(self.files.paths().into_iter().chain([&self.store]).chain(extra))
    }

    fn load(&self, split: &str) -> Result<Loaded> {
        let instances = self.files.load(split)?;
        let corpus = wic_to_corpus(&instances)?;
        let store = EmbeddingStore::open_aligned(&self.store, &corpus)
            .with_context(|| format!("store {} does not hold split {split}", self.store.display()))?;
        let mut prompted = Vec::new();
        for p in &self.prompted {
            let text = std::fs::read_to_string(&p.map).with_context(|| format!("reading {}", p.map.display()))?;
            let map = PromptedCorpusMap::from_json(&text).with_context(|| format!("parsing {}", p.map.display()))?;
            if map.original_fingerprint.as_deref().is_some_and(|fp| fp != corpus.fingerprint()) {
                bail!("map {} for {} was built from a different split", p.map.display(), map.prompt_id);
            }
            let s = EmbeddingStore::open(&p.store).with_context(|| format!("opening {}", p.store.display()))?;
            if map.prompted_fingerprint.as_deref().is_some_and(|fp| fp != s.manifest().corpus_fingerprint) {
                bail!("store {} does not hold the {} prompted corpus", p.store.display(), map.prompt_id);
            }
            if prompted.iter().any(|(_, m): &(EmbeddingStore, PromptedCorpusMap)| m.prompt_id == map.prompt_id) {
                bail!("prompt {} given twice", map.prompt_id);
            }
            prompted.push((s, map));
        }
        Ok(Loaded { instances, store, prompted })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionThresholds {
    pub condition: String,
    pub models: Vec<ThresholdModel>,
}

/// Fitted thresholds per condition, read back by wsd-eval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub schema_version: u32,
    pub seed: u64,
    pub fit_split: String,
    pub n_instances: usize,
    pub conditions: Vec<ConditionThresholds>,
}

#[derive(Args, Debug, Serialize)]
pub struct WsdFitCmd {
    #[command(flatten)]
    pub sources: WsdSources,
    #[arg(long, default_value = "all")]
    pub layers: LayerList,
    /// Split name; also the prefix of instance ids.
    #[arg(long, default_value = "train")]
    pub split: String,
}

pub fn fit(ctx: &mut Ctx, a: &WsdFitCmd) -> Result<String> {
    a.sources.require()?;
    let l = a.sources.load(&a.split)?;
    let layers = a.layers.resolve(&l.store)?;
    let mut conditions = Vec::new();
    let mut t = Table::new(&["condition", "layer", "threshold", "fit_accuracy"]);
    for name in l.conditions() {
        let src = l.source(&name).expect("listed condition");
        let models = layers
            .iter()
            .map(|&layer| fit_threshold(&l.instances, &src, layer, &a.split))
            .collect::<Result<Vec<_>, _>>()?;
        for m in &models {
            t.push(vec![name.clone(), m.layer.to_string(), f(m.threshold), f(m.fit_accuracy)]);
        }
        conditions.push(ConditionThresholds { condition: name, models });
    }
    let set = ThresholdSet {
        schema_version: WIC_REPORT_SCHEMA_VERSION,
        seed: ctx.seed,
        fit_split: a.split.clone(),
        n_instances: l.instances.len(),
        conditions,
    };
    ctx.out.artifact(THRESHOLDS_FILE, &set)?;
    ctx.report("wsd_fit", "wsd-fit", a, &set, &t)?;
    Ok(format!("{} conditions x {} layers fitted on {} instances", set.conditions.len(), layers.len(), set.n_instances))
}

#[derive(Args, Debug, Serialize)]
pub struct WsdEvalCmd {
    #[command(flatten)]
    pub sources: WsdSources,
    /// Threshold file written by wsd-fit.
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long, default_value = "dev")]
    pub split: String,
}

pub fn eval(ctx: &mut Ctx, a: &WsdEvalCmd) -> Result<String> {
    a.sources.require()?;
    require([&a.thresholds])?;
    let text = std::fs::read_to_string(&a.thresholds).with_context(|| format!("reading {}", a.thresholds.display()))?;
    let set: ThresholdSet =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.thresholds.display()))?;
    if set.conditions.first().map(|c| c.condition.as_str()) != Some(ORIGINAL) {
        bail!("threshold file must start with the {ORIGINAL} condition");
    }
    let l = a.sources.load(&a.split)?;
    let mut reports = Vec::new();
    for cond in &set.conditions {
        let src = l
            .source(&cond.condition)
            .ok_or_else(|| anyhow!("no prompted store given for condition {}", cond.condition))?;
        let layers = cond.models.iter().map(|m| evaluate(&l.instances, m, &src)).collect::<Result<Vec<_>, _>>()?;
        reports.push(ConditionReport {
            condition: cond.condition.clone(),
            layers,
            delta_accuracy: None,
            delta_first_word: None,
        });
    }
    let layers = set.conditions[0].models.iter().map(|m| m.layer).collect();
    let report = WicReport {
        schema_version: WIC_REPORT_SCHEMA_VERSION,
        fit_split: set.fit_split.clone(),
        eval_split: a.split.clone(),
        layers,
        conditions: with_deltas(reports),
    };
    let mut t = Table::new(&[
        "condition",
        "layer",
        "threshold",
        "fit_accuracy",
        "accuracy",
        "first_word_n",
        "first_word_accuracy",
        "others_n",
        "others_accuracy",
        "delta_accuracy",
        "delta_first_word",
    ]);
    for c in &report.conditions {
        for (i, r) in c.layers.iter().enumerate() {
            t.push(vec![
                c.condition.clone(),
                r.layer.to_string(),
                f(r.threshold),
                f(r.fit_accuracy),
                f(r.accuracy),
                r.first_word.n.to_string(),
                num(r.first_word.accuracy),
                r.others.n.to_string(),
                num(r.others.accuracy),
                num(c.delta_accuracy.as_ref().map(|d| d[i])),
                num(c.delta_first_word.as_ref().and_then(|d| d[i])),
            ]);
        }
    }
    let best = report.conditions[0]
        .layers
        .iter()
        .max_by(|x, y| x.accuracy.total_cmp(&y.accuracy))
        .map(|r| format!("best original layer {} at {:.4}", r.layer, r.accuracy))
        .unwrap_or_default();
    ctx.report("wsd_eval", "wsd-eval", a, &report, &t)?;
    Ok(format!("{} instances; {best}", l.instances.len()))
}
