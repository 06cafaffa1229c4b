use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use sensevar::bias::{apply_prompt, PromptTemplate};
use sensevar::corpus::corpus_stats;
use sensevar::wsd::{load_wic, wic_to_corpus, WicInstance};
use serde::Serialize;

use super::{require, Ctx};
use crate::args::load_corpus;
use crate::output::{f, Table};

#[derive(Args, Debug, Serialize)]
pub struct IngestCmd {
    #[arg(long)]
    pub corpus: PathBuf,
    /// File name of the normalized copy inside the output directory.
    #[arg(long, default_value = "corpus.jsonl")]
    pub name: String,
}

#[derive(Serialize)]
struct IngestResult {
    fingerprint: String,
    sentence_count: usize,
    total_tokens: usize,
    labeled_tokens: usize,
    sense_inventory_size: usize,
}

pub fn ingest(ctx: &mut Ctx, a: &IngestCmd) -> Result<String> {
    require([&a.corpus])?;
    let c = load_corpus(&a.corpus)?;
    ctx.out.bytes(&a.name, c.to_jsonl().as_bytes())?;
    let r = IngestResult {
        fingerprint: c.fingerprint().to_string(),
        sentence_count: c.sentences().len(),
        total_tokens: c.total_tokens(),
        labeled_tokens: c.labeled().len(),
        sense_inventory_size: c.sense_inventory().len(),
    };
    let mut t = Table::new(&["fingerprint", "sentences", "tokens", "labeled_tokens", "senses"]);
    t.push(vec![
        r.fingerprint.clone(),
        r.sentence_count.to_string(),
        r.total_tokens.to_string(),
        r.labeled_tokens.to_string(),
        r.sense_inventory_size.to_string(),
    ]);
    ctx.report("ingest", "ingest", a, &r, &t)?;
    Ok(format!("{} sentences, {} labeled of {} tokens", r.sentence_count, r.labeled_tokens, r.total_tokens))
}

#[derive(Args, Debug, Serialize)]
pub struct StatsCmd {
    #[arg(long)]
    pub corpus: PathBuf,
}

pub fn stats(ctx: &mut Ctx, a: &StatsCmd) -> Result<String> {
    require([&a.corpus])?;
    let c = load_corpus(&a.corpus)?;
    let s = corpus_stats(&c);
    let mut t = Table::new(&["metric", "pos", "value"]);
    let mut row = |m: &str, pos: &str, v: String| t.push(vec![m.into(), pos.into(), v]);
    row("total_tokens", "", s.total_tokens.to_string());
    row("labeled_tokens", "", s.labeled_tokens.to_string());
    row("vocabulary_size", "", s.vocabulary_size.to_string());
    row("sentence_count", "", s.sentence_count.to_string());
    row("mean_sentence_length", "", f(s.mean_sentence_length));
    row("sense_inventory_size", "", s.sense_inventory_size.to_string());
    row("senses_per_token_mean", "", f(s.senses_per_token_mean));
    row("senses_per_token_max", "", s.senses_per_token_max.to_string());
    for (pos, v) in &s.pos_distribution {
        row("pos_share", pos.as_str(), f(*v));
    }
    for (pos, v) in &s.senses_per_word_by_pos {
        row("senses_per_word", pos.as_str(), f(*v));
    }
    ctx.report("stats", "stats", a, &s, &t)?;
    Ok(format!(
        "{} tokens, {} labeled, {} senses, {:.2} senses per word",
        s.total_tokens, s.labeled_tokens, s.sense_inventory_size, s.senses_per_token_mean
    ))
}

#[derive(Args, Debug, Serialize)]
pub struct PromptApplyCmd {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Built-in template (P1, P2, P3, identity); repeatable. Defaults to
    /// the three built-ins unless a custom template is given.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Custom template id.
    #[arg(long, default_value = "custom")]
    pub id: String,
    /// Space-separated custom prefix tokens.
    #[arg(long)]
    pub prefix: Option<String>,
    /// Space-separated custom suffix tokens.
    #[arg(long)]
    pub suffix: Option<String>,
}

#[derive(Serialize)]
struct PromptFiles {
    prompt_id: String,
    template: String,
    offset: u32,
    suffix_len: u32,
    corpus_file: String,
    map_file: String,
    prompted_fingerprint: String,
}

pub fn prompt_apply(ctx: &mut Ctx, a: &PromptApplyCmd) -> Result<String> {
    require([&a.corpus])?;
    let words = |s: &Option<String>| s.as_deref().unwrap_or("").split_whitespace().map(str::to_string).collect();
    let mut templates: Vec<PromptTemplate> = a.prompt.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
    if a.prefix.is_some() || a.suffix.is_some() {
        templates.push(PromptTemplate::new(a.id.clone(), words(&a.prefix), words(&a.suffix))?);
    }
    if templates.is_empty() {
        templates = PromptTemplate::builtins().to_vec();
    }
    let c = load_corpus(&a.corpus)?;
    let mut files = Vec::new();
    for t in &templates {
        let (pc, map) = apply_prompt(&c, t);
        let corpus_file = format!("{}.corpus.jsonl", t.id);
        let map_file = format!("{}.map.json", t.id);
        ctx.out.bytes(&corpus_file, pc.to_jsonl().as_bytes())?;
        ctx.out.bytes(&map_file, map.to_json().as_bytes())?;
        files.push(PromptFiles {
            prompt_id: t.id.clone(),
            template: t.to_string(),
            offset: map.offset,
            suffix_len: map.suffix_len,
            corpus_file,
            map_file,
            prompted_fingerprint: pc.fingerprint().to_string(),
        });
    }
    let mut t = Table::new(&["prompt_id", "template", "offset", "suffix_len", "corpus_file", "map_file"]);
    for p in &files {
        t.push(vec![
            p.prompt_id.clone(),
            p.template.clone(),
            p.offset.to_string(),
            p.suffix_len.to_string(),
            p.corpus_file.clone(),
            p.map_file.clone(),
        ]);
    }
    ctx.report("prompt_apply", "prompt-apply", a, &files, &t)?;
    Ok(format!("{} prompted corpora", files.len()))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct WicFiles {
    /// Word-in-context data file (tab separated, 0-based target indices).
    #[arg(long)]
    pub data: PathBuf,
    /// Gold file with one T or F per line.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

impl WicFiles {
    pub fn paths(&self) -> Vec<&PathBuf> {
        std::iter::once(&self.data).chain(&self.gold).collect()
    }

    pub fn load(&self, prefix: &str) -> Result<Vec<WicInstance>> {
        let data = File::open(&self.data).with_context(|| format!("opening {}", self.data.display()))?;
        let gold = self
            .gold
            .as_ref()
            .map(|g| File::open(g).with_context(|| format!("opening {}", g.display())))
            .transpose()?;
        load_wic(data, gold, prefix).with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct WsdCorpusCmd {
    #[command(flatten)]
    pub files: WicFiles,
    /// Split name; also the prefix of instance ids.
    #[arg(long, default_value = "wic")]
    pub split: String,
}

pub fn wsd_corpus(ctx: &mut Ctx, a: &WsdCorpusCmd) -> Result<String> {
    require(a.files.paths())?;
    let instances = a.files.load(&a.split)?;
    let c = wic_to_corpus(&instances)?;
    let name = format!("{}.corpus.jsonl", a.split);
    ctx.out.bytes(&name, c.to_jsonl().as_bytes())?;
    Ok(format!("{} instances -> {} sentences, fingerprint {}", instances.len(), c.sentences().len(), c.fingerprint()))
}
