use anyhow::Result;
use clap::{Args, ValueEnum};
use sensevar::bias::{apply_prompt, PromptTemplate};
use sensevar::embstore::encode_store;
use sensevar::synth::{
    position_bias_fixture, position_rows, sense_fixture, sense_fixture_masked, wic_fixture, PositionFixtureConfig,
    SenseFixtureConfig, WicFixtureConfig,
};
use sensevar::wsd::write_wic;
use sensevar::{Corpus, EmbeddingManifest, EmbeddingStore, Variant};
use serde::Serialize;

use super::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Sense clusters with plain and masked stores.
    Sense,
    /// Sentence-initial anchor plus prompted stores.
    Position,
    /// Word-in-context train and dev splits plus prompted stores.
    Wic,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthCmd {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    /// Occurrences per word (sense), sentences (position) or instances per split (wic).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

fn write_corpus(ctx: &mut Ctx, name: &str, c: &Corpus) -> Result<()> {
    ctx.out.bytes(name, c.to_jsonl().as_bytes())?;
    Ok(())
}

/// Store image plus its manifest sidecar.
fn write_store(ctx: &mut Ctx, name: &str, bytes: &[u8]) -> Result<()> {
    let manifest = EmbeddingStore::from_bytes(bytes.to_vec())?.manifest().clone();
    ctx.out.bytes(name, bytes)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    ctx.out.bytes(&format!("{name}.json"), json.as_bytes())?;
    Ok(())
}

pub fn synth(ctx: &mut Ctx, a: &SynthCmd) -> Result<String> {
    match a.kind {
        SynthKind::Sense => {
            let mut cfg = SenseFixtureConfig { seed: ctx.seed, ..Default::default() };
            cfg.occurrences_per_word = a.size.unwrap_or(cfg.occurrences_per_word);
            cfg.dim = a.dim.unwrap_or(cfg.dim);
            let plain = sense_fixture(&cfg);
            let masked = sense_fixture_masked(&cfg);
            write_corpus(ctx, "corpus.jsonl", &plain.corpus)?;
            write_store(ctx, "plain.semb", &plain.store_bytes)?;
            write_store(ctx, "masked.semb", &masked.store_bytes)?;
            Ok(format!("{} sentences, {} senses", plain.corpus.sentences().len(), cfg.n_senses))
        }
        SynthKind::Position => {
            let mut cfg = PositionFixtureConfig { seed: ctx.seed, ..Default::default() };
            cfg.n_sentences = a.size.unwrap_or(cfg.n_sentences);
            cfg.dim = a.dim.unwrap_or(cfg.dim);
            let fx = position_bias_fixture(&cfg);
            write_corpus(ctx, "corpus.jsonl", &fx.corpus)?;
            write_store(ctx, "plain.semb", &fx.store_bytes)?;
            for t in PromptTemplate::builtins() {
                let (pc, map) = apply_prompt(&fx.corpus, &t);
                // The simulated model keeps favouring absolute position 1.
                let mut m = EmbeddingManifest::new("synthetic-position", 1, cfg.dim as u32, Variant::Plain, &pc);
                m.prompt_id = Some(t.id.clone());
                let bytes = encode_store(&m, position_rows(&pc, &cfg, 0))?;
                write_corpus(ctx, &format!("{}.corpus.jsonl", t.id), &pc)?;
                ctx.out.bytes(&format!("{}.map.json", t.id), map.to_json().as_bytes())?;
                write_store(ctx, &format!("{}.semb", t.id), &bytes)?;
            }
            Ok(format!("{} sentences of length {}", cfg.n_sentences, cfg.sentence_len))
        }
        SynthKind::Wic => {
            for (split, offset) in [("train", 0), ("dev", 1)] {
                let mut cfg = WicFixtureConfig {
                    seed: ctx.seed.wrapping_add(offset),
                    id_prefix: split.into(),
                    ..Default::default()
                };
                cfg.n_instances = a.size.unwrap_or(cfg.n_instances);
                cfg.dim = a.dim.unwrap_or(cfg.dim);
                let fx = wic_fixture(&cfg);
                let (data, gold) = write_wic(&fx.instances);
                ctx.out.bytes(&format!("{split}.data.txt"), data.as_bytes())?;
                ctx.out.bytes(&format!("{split}.gold.txt"), gold.unwrap_or_default().as_bytes())?;
                write_corpus(ctx, &format!("{split}.corpus.jsonl"), &fx.corpus)?;
                write_store(ctx, &format!("{split}.semb"), &fx.store_bytes)?;
                for t in PromptTemplate::builtins() {
                    let (_, map, bytes) = fx.prompted(&t);
                    ctx.out.bytes(&format!("{split}_{}.map.json", t.id), map.to_json().as_bytes())?;
                    write_store(ctx, &format!("{split}_{}.semb", t.id), &bytes)?;
                }
            }
            Ok("train and dev splits".into())
        }
    }
}
