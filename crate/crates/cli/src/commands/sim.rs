use anyhow::{Context, Result};
use clap::Args;
use sensevar::bias::{
    pos_position_composition, position_similarity, prompt_shift_report, PromptShiftReport, PromptedCorpusMap,
    ShiftConfig,
};
use sensevar::metrics::{enumerate_pairs, layer_sweep, sim_aggregate, sim_rand, RandomBaseline};
use sensevar::{Buckets, EmbeddingStore, Facet, FacetSpec, SimReport};
use serde::Serialize;

use super::{require, Ctx};
use crate::args::{InputArgs, LayerList, LayerSel, PromptedInput, RandomArgs, RelationArg, SamplerArgs};
use crate::output::{f, num, Table};

#[derive(Args, Debug, Serialize)]
pub struct SimCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = RelationArg::Both)]
    pub relation: RelationArg,
    /// Layer number, `first` or `last`.
    #[arg(long, default_value = "last")]
    pub layer: LayerSel,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub random: RandomArgs,
}

#[derive(Serialize)]
struct SimResult {
    random: RandomBaseline,
    reports: Vec<SimReport>,
}

const SIM_COLUMNS: [&str; 11] = [
    "relation",
    "variant",
    "layer",
    "aggregation",
    "identity",
    "sim",
    "sim_rand",
    "delta",
    "pair_count_exact",
    "pair_count_used",
    "cap",
];

fn sim_row(r: &SimReport) -> Vec<String> {
    vec![
        r.relation.to_string(),
        r.variant.to_string(),
        r.layer.to_string(),
        json_str(&r.aggregation),
        json_str(&r.identity),
        num(r.global.sim_value),
        num(r.global.sim_rand),
        num(r.global.delta),
        r.global.pair_count_exact.to_string(),
        r.global.pair_count_used.to_string(),
        r.sampler.max_pairs_per_group.map(|c| c.to_string()).unwrap_or_default(),
    ]
}

/// Serde name of a unit enum value.
fn json_str<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn sim(ctx: &mut Ctx, a: &SimCmd) -> Result<String> {
    require(a.input.paths())?;
    let (c, store) = a.input.load()?;
    let layer = a.layer.resolve(&store)?;
    let random = sim_rand(&store, &c, &a.random.config(ctx.seed), layer)?;
    let mut reports = Vec::new();
    for rel in a.relation.relations() {
        let pairs = enumerate_pairs(&c, rel, None, a.sampler.sampler(ctx.seed), a.sampler.identity())?;
        let mut r = sim_aggregate(&store, &c, &pairs, layer, a.sampler.aggregation())?;
        r.attach_baseline(random.value);
        reports.push(r);
    }
    let mut t = Table::new(&SIM_COLUMNS);
    reports.iter().for_each(|r| t.push(sim_row(r)));
    let summary = reports
        .iter()
        .map(|r| format!("Sim_{} = {} (delta {})", r.relation, num(r.global.sim_value), num(r.global.delta)))
        .collect::<Vec<_>>()
        .join(", ");
    ctx.report("sim", "sim", a, &SimResult { random, reports }, &t)?;
    Ok(format!("layer {layer}: {summary}"))
}

#[derive(Args, Debug, Serialize)]
pub struct LayersCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = RelationArg::Both)]
    pub relation: RelationArg,
    /// `all`, or layers and ranges such as `1,4-6,last`.
    #[arg(long, default_value = "all")]
    pub layers: LayerList,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub random: RandomArgs,
}

#[derive(Serialize)]
struct LayersResult {
    random: Vec<RandomBaseline>,
    reports: Vec<SimReport>,
}

pub fn layers(ctx: &mut Ctx, a: &LayersCmd) -> Result<String> {
    require(a.input.paths())?;
    let (c, store) = a.input.load()?;
    let layers = a.layers.resolve(&store)?;
    let random =
        layers.iter().map(|&l| sim_rand(&store, &c, &a.random.config(ctx.seed), l)).collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for rel in a.relation.relations() {
        let pairs = enumerate_pairs(&c, rel, None, a.sampler.sampler(ctx.seed), a.sampler.identity())?;
        for (mut r, b) in layer_sweep(&store, &c, &pairs, &layers, a.sampler.aggregation())?.into_iter().zip(&random) {
            r.attach_baseline(b.value);
            reports.push(r);
        }
    }
    let mut t = Table::new(&SIM_COLUMNS);
    reports.iter().for_each(|r| t.push(sim_row(r)));
    let n = reports.len();
    ctx.report("layers", "layers", a, &LayersResult { random, reports }, &t)?;
    Ok(format!("{n} layer rows over layers {layers:?}"))
}

#[derive(Args, Debug, Serialize)]
pub struct BreakdownCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// pos, n_senses, sent_len, rel_dist or position_index.
    #[arg(long)]
    pub by: Facet,
    /// Lower bucket bounds, e.g. `1,2,6,10`. Facet defaults otherwise.
    #[arg(long)]
    pub buckets: Option<Buckets>,
    #[arg(long, value_enum, default_value_t = RelationArg::Ss)]
    pub relation: RelationArg,
    #[arg(long, default_value = "last")]
    pub layer: LayerSel,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub random: RandomArgs,
}

#[derive(Serialize)]
struct BreakdownResult {
    random: RandomBaseline,
    reports: Vec<SimReport>,
}

const BUCKET_COLUMNS: [&str; 9] =
    ["facet", "relation", "layer", "bucket", "pair_count_exact", "pair_count_used", "mean_cosine", "sim_rand", "delta"];

fn bucket_rows(t: &mut Table, facet: &str, r: &SimReport, sim_rand: f64) {
    for b in &r.buckets {
        t.push(vec![
            facet.to_string(),
            r.relation.to_string(),
            r.layer.to_string(),
            b.bucket.clone(),
            b.pair_count_exact.to_string(),
            b.pair_count_used.to_string(),
            num(b.mean_cosine),
            f(sim_rand),
            num(b.delta_vs_random),
        ]);
    }
}

pub fn breakdown(ctx: &mut Ctx, a: &BreakdownCmd) -> Result<String> {
    require(a.input.paths())?;
    let (c, store) = a.input.load()?;
    let layer = a.layer.resolve(&store)?;
    let spec = match &a.buckets {
        Some(b) => FacetSpec::with_buckets(a.by, b.clone()),
        None => FacetSpec::new(a.by),
    };
    let random = sim_rand(&store, &c, &a.random.config(ctx.seed), layer)?;
    let mut reports = Vec::new();
    let mut t = Table::new(&BUCKET_COLUMNS);
    for rel in a.relation.relations() {
        let mut r = sensevar::metrics::breakdown(
            &store,
            &c,
            &spec,
            rel,
            a.sampler.sampler(ctx.seed),
            a.sampler.identity(),
            layer,
            a.sampler.aggregation(),
        )?;
        r.attach_baseline(random.value);
        bucket_rows(&mut t, a.by.as_str(), &r, random.value);
        reports.push(r);
    }
    let n = t.len();
    ctx.report("breakdown", "breakdown", a, &BreakdownResult { random, reports }, &t)?;
    Ok(format!("{n} bucket rows by {} at layer {layer}", a.by))
}

#[derive(Args, Debug, Serialize)]
pub struct BiasCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "last")]
    pub layers: LayerList,
    /// Position bucket lower bounds.
    #[arg(long, default_value = "1,2,5,9,17")]
    pub buckets: Buckets,
    /// Prompted store and its corpus map, as `STORE=MAP`; repeatable.
    #[arg(long)]
    pub prompted: Vec<PromptedInput>,
    /// Positions listed in the part-of-speech composition table.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub composition_positions: Vec<u32>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub random: RandomArgs,
}

#[derive(Serialize)]
struct BiasResult {
    position: Vec<SimReport>,
    random: Vec<RandomBaseline>,
    prompt_shift: Vec<PromptShiftReport>,
    composition: sensevar::bias::CompositionTable,
}

pub fn bias(ctx: &mut Ctx, a: &BiasCmd) -> Result<String> {
    require(a.input.paths().into_iter().chain(a.prompted.iter().flat_map(|p| [&p.store, &p.map])))?;
    let (c, store) = a.input.load()?;
    let layers = a.layers.resolve(&store)?;
    let prompted = a
        .prompted
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p.map).with_context(|| format!("reading {}", p.map.display()))?;
            let map = PromptedCorpusMap::from_json(&text).with_context(|| format!("parsing {}", p.map.display()))?;
            let s = EmbeddingStore::open(&p.store).with_context(|| format!("opening {}", p.store.display()))?;
            Ok((s, map))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = prompted.iter().map(|(s, m)| (s, m)).collect();

    let mut position = Vec::new();
    let mut random = Vec::new();
    let mut shift = Vec::new();
    let mut t = Table::new(&BUCKET_COLUMNS);
    let mut ts = Table::new(&["layer", "bucket", "pair_count", "condition", "offset", "delta", "change"]);
    for &layer in &layers {
        let b = sim_rand(&store, &c, &a.random.config(ctx.seed), layer)?;
        let mut r =
            position_similarity(&store, &c, &a.buckets, a.sampler.sampler(ctx.seed), layer, a.sampler.aggregation())?;
        r.attach_baseline(b.value);
        bucket_rows(&mut t, "position_index", &r, b.value);
        position.push(r);
        random.push(b);
        if refs.is_empty() {
            continue;
        }
        let cfg = ShiftConfig {
            sampler: a.sampler.sampler(ctx.seed),
            random: a.random.config(ctx.seed),
            aggregation: a.sampler.aggregation(),
            layer,
        };
        let rep = prompt_shift_report(&store, &refs, &c, &a.buckets, &cfg)?;
        for (i, label) in rep.buckets.iter().enumerate() {
            let mut row = |cond: &str, offset: String, delta: Option<f64>, change: Option<f64>| {
                ts.push(vec![
                    layer.to_string(),
                    label.clone(),
                    rep.pair_counts[i].to_string(),
                    cond.to_string(),
                    offset,
                    num(delta),
                    num(change),
                ])
            };
            row("original", "0".into(), rep.delta_original[i], None);
            for cond in &rep.conditions {
                row(&cond.prompt_id, cond.offset.to_string(), cond.delta[i], cond.change[i]);
            }
            row("average", String::new(), None, rep.average_change[i]);
        }
        shift.push(rep);
    }
    let composition = pos_position_composition(&c, &a.composition_positions);
    let mut tc = Table::new(&["pos", "share", "position", "share_at_position"]);
    for row in &composition.rows {
        for (p, s) in composition.positions.iter().zip(&row.at_position) {
            tc.push(vec![row.pos.to_string(), f(row.share), p.to_string(), f(*s)]);
        }
    }
    let summary = position
        .iter()
        .map(|r| {
            let first = r.buckets.first().and_then(|b| b.delta_vs_random);
            format!("layer {}: first-bucket delta {}", r.layer, num(first))
        })
        .collect::<Vec<_>>()
        .join("; ");
    let has_shift = !shift.is_empty();
    let result = BiasResult { position, random, prompt_shift: shift, composition };
    ctx.report("bias", "bias", a, &result, &t)?;
    if has_shift {
        ctx.out.table("bias_prompt_shift", &ts)?;
    }
    ctx.out.table("bias_composition", &tc)?;
    Ok(summary)
}
