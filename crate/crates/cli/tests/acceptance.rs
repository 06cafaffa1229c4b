//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

// `!(a < b)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sensevar::bias::position_similarity;
use sensevar::embstore::{expected_file_size, write_store, StoreError};
use sensevar::metrics::{breakdown, enumerate_pairs, sim_aggregate, sim_rand, RandomConfig};
use sensevar::probe::{train_features, ProbeConfig, ProbeKind, ProbeModel};
use sensevar::synth::{
    gaussian, pair_features, position_bias_fixture, position_rows, small_fixture, store_for, PairStructure,
    PositionFixtureConfig, SmallFixtureConfig,
};
use sensevar::wsd::{evaluate_scores, fit_threshold_scores, ThresholdModel, WicInstance};
use sensevar::{
    cosine, Aggregation, Buckets, Corpus, EmbeddingManifest, EmbeddingStore, Facet, FacetSpec, MetricsError, OccId,
    OccurrenceKey, Pos, Relation, SamplerConfig, Sentence, SimReport, Token, Variant, WordIdentity,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn store_of(c: &Corpus, dim: usize, rows: Vec<(OccurrenceKey, Vec<Vec<f32>>)>) -> EmbeddingStore {
    let n_layers = rows.first().map_or(1, |r| r.1.len() as u32);
    EmbeddingStore::from_bytes(store_for(c, "acceptance", n_layers, dim, Variant::Plain, rows).unwrap().1).unwrap()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn naive_cos(u: &[f32], v: &[f32]) -> f64 {
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    uv / (uu.sqrt() * vv.sqrt())
}

fn labels(facet: Facet, v: u32) -> &'static str {
    let bounds: &[(u32, &str)] = match facet {
        Facet::NSenses => &[(1, "1"), (5, "2-5"), (9, "6-9"), (u32::MAX, "10+")],
        Facet::SentLen => &[(8, "1-8"), (16, "9-16"), (32, "17-32"), (u32::MAX, "33+")],
        Facet::RelDist => &[(0, "0"), (3, "1-3"), (7, "4-7"), (15, "8-15"), (u32::MAX, "16+")],
        _ => &[(1, "1"), (4, "2-4"), (8, "5-8"), (16, "9-16"), (u32::MAX, "17+")],
    };
    bounds.iter().find(|(hi, _)| v <= *hi).unwrap().1
}

// ---------------------------------------------------------------- 1

struct Brute<'a> {
    c: &'a Corpus,
    s: &'a EmbeddingStore,
}

impl Brute<'_> {
    fn cos(&self, a: OccId, b: OccId, layer: u32) -> f64 {
        let v = |o| self.s.get_vector(&self.c.key(o), layer).unwrap().values;
        naive_cos(&v(a), &v(b))
    }

    fn pairs(&self, rel: Relation) -> Vec<(OccId, OccId)> {
        let lab = self.c.labeled();
        let mut out = Vec::new();
        for (i, &a) in lab.iter().enumerate() {
            for &b in &lab[i + 1..] {
                let (ta, tb) = (self.c.token(a), self.c.token(b));
                let same_word = ta.surface == tb.surface;
                let wanted = match rel {
                    Relation::SameWordSameSense => same_word,
                    _ => !same_word,
                };
                if ta.sense == tb.sense && wanted {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn n_senses(&self, o: OccId) -> usize {
        let w = &self.c.token(o).surface;
        let mut senses: Vec<_> = self
            .c
            .labeled()
            .iter()
            .map(|&x| self.c.token(x))
            .filter(|t| &t.surface == w)
            .map(|t| t.sense.clone())
            .collect();
        senses.sort();
        senses.dedup();
        senses.len()
    }

    fn bucket(&self, facet: Facet, a: OccId, b: OccId) -> Option<String> {
        Some(match facet {
            Facet::Pos => self.c.token(a).pos.to_string(),
            Facet::NSenses => labels(facet, self.n_senses(a).max(self.n_senses(b)) as u32).into(),
            Facet::SentLen => {
                let (la, lb) = (labels(facet, self.c.sentence_len(a)), labels(facet, self.c.sentence_len(b)));
                (la == lb).then_some(la)?.into()
            }
            Facet::RelDist => labels(facet, a.index().abs_diff(b.index())).into(),
            Facet::PositionIndex => (a.index() == b.index()).then(|| labels(facet, a.index()))?.into(),
        })
    }

    fn all_pairs_mean(&self, occs: &[OccId], layer: u32) -> f64 {
        let mut cos = Vec::new();
        for (i, &a) in occs.iter().enumerate() {
            for &b in &occs[i + 1..] {
                cos.push(self.cos(a, b, layer));
            }
        }
        mean(&cos).unwrap()
    }
}

fn close(got: Option<f64>, want: Option<f64>, what: &str) -> Result<(), String> {
    match (got, want) {
        (Some(g), Some(w)) if (g - w).abs() <= 1e-9 => Ok(()),
        (None, None) => Ok(()),
        other => Err(format!("{what}: {other:?}")),
    }
}

fn check_buckets(r: &SimReport, want: &BTreeMap<String, Vec<f64>>, what: &str) -> Result<(), String> {
    for b in &r.buckets {
        let w = want.get(&b.bucket).map_or(&[][..], Vec::as_slice);
        ensure!(
            b.pair_count_exact as usize == w.len(),
            "{what} {}: count {} vs {}",
            b.bucket,
            b.pair_count_exact,
            w.len()
        );
        close(b.mean_cosine, mean(w), &format!("{what} {}", b.bucket))?;
    }
    let covered: u64 = r.buckets.iter().map(|b| b.pair_count_exact).sum();
    ensure!(covered as usize == want.values().map(Vec::len).sum::<usize>(), "{what}: coverage");
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let facets = [Facet::Pos, Facet::NSenses, Facet::SentLen, Facet::RelDist, Facet::PositionIndex];
    let mut fixtures = 0;
    let mut slowest = Duration::ZERO;
    for seed in 0..200 {
        let cfg = SmallFixtureConfig { seed, n_sentences: 6, max_sentence_len: 8, ..Default::default() };
        let f = small_fixture(&cfg);
        if f.corpus.total_tokens() > 50 || f.corpus.sense_inventory().len() != 4 {
            continue;
        }
        fixtures += 1;
        let store = f.store();
        let b = Brute { c: &f.corpus, s: &store };
        for layer in 1..=cfg.n_layers {
            let t0 = Instant::now();
            let mut got = Vec::new();
            for rel in [Relation::SameWordSameSense, Relation::DiffWordSameSense] {
                let p =
                    enumerate_pairs(&f.corpus, rel, None, SamplerConfig::unlimited(0), WordIdentity::Surface).unwrap();
                let global = sim_aggregate(&store, &f.corpus, &p, layer, Aggregation::Micro).unwrap().global.sim_value;
                let faceted: Vec<SimReport> = facets
                    .iter()
                    .map(|&fa| {
                        let spec = FacetSpec::new(fa);
                        breakdown(
                            &store,
                            &f.corpus,
                            &spec,
                            rel,
                            SamplerConfig::unlimited(0),
                            WordIdentity::Surface,
                            layer,
                            Aggregation::Micro,
                        )
                        .unwrap()
                    })
                    .collect();
                got.push((rel, global, faceted));
            }
            let rand_all = sim_rand(&store, &f.corpus, &RandomConfig::default(), layer).unwrap().value;
            let rand_lab =
                sim_rand(&store, &f.corpus, &RandomConfig { labeled_only: true, ..Default::default() }, layer)
                    .unwrap()
                    .value;
            let pos = position_similarity(
                &store,
                &f.corpus,
                &Buckets::positions(),
                SamplerConfig::unlimited(0),
                layer,
                Aggregation::Micro,
            )
            .unwrap();
            slowest = slowest.max(t0.elapsed());

            for (rel, global, faceted) in &got {
                let cos: Vec<f64> = b.pairs(*rel).into_iter().map(|(x, y)| b.cos(x, y, layer)).collect();
                close(*global, mean(&cos), &format!("seed {seed} L{layer} {rel}"))?;
                for (fa, r) in facets.iter().zip(faceted) {
                    let mut want: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                    for (x, y) in b.pairs(*rel) {
                        if let Some(k) = b.bucket(*fa, x, y) {
                            want.entry(k).or_default().push(b.cos(x, y, layer));
                        }
                    }
                    check_buckets(r, &want, &format!("seed {seed} L{layer} {rel} {fa}"))?;
                }
            }
            let all: Vec<OccId> = f.corpus.all_occurrences().collect();
            close(Some(rand_all), Some(b.all_pairs_mean(&all, layer)), "random baseline")?;
            close(Some(rand_lab), Some(b.all_pairs_mean(f.corpus.labeled(), layer)), "labeled random baseline")?;
            let mut want: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (x, y) in b.pairs(Relation::SameWordSameSense) {
                if x.index() == y.index() {
                    want.entry(labels(Facet::PositionIndex, x.index()).into()).or_default().push(b.cos(x, y, layer));
                }
            }
            check_buckets(&pos, &want, &format!("seed {seed} L{layer} position"))?;
        }
    }
    ensure!(fixtures >= 10, "only {fixtures} qualifying fixtures");
    ensure!(slowest < Duration::from_secs(1), "slowest fixture took {slowest:?}");
    Ok(format!("{fixtures} fixtures x 3 layers within 1e-9; slowest {:.1} ms", slowest.as_secs_f64() * 1e3))
}

// ---------------------------------------------------------------- 2

fn cosine_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let dim = rng.random_range(1..=64);
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (a, b) = (10f64.powf(rng.random_range(-3.0..3.0)), 10f64.powf(rng.random_range(-3.0..3.0)));
        let c = cosine(&u, &v).unwrap();
        ensure!(c.to_bits() == cosine(&v, &u).unwrap().to_bits(), "draw {i}: asymmetric");
        for w in [&u, &v] {
            let d = (cosine(w, w).unwrap() - 1.0).abs();
            ensure!(d <= 1e-12, "draw {i}: self-similarity off by {d}");
        }
        let su: Vec<f64> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f64> = v.iter().map(|x| b * x).collect();
        let d = (cosine(&su, &sv).unwrap() - c).abs();
        ensure!(d <= 1e-12, "draw {i}: scaling moved cosine by {d}");
        worst = worst.max(d);
    }
    ensure!(matches!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(MetricsError::ZeroNorm { .. })), "zero vector accepted");

    // A zero row inside a store is reported with its key.
    let c = Corpus::from_sentences(vec![
        Sentence::new("a", vec![Token::new("w", Pos::Noun).with_sense("s")]),
        Sentence::new("b", vec![Token::new("w", Pos::Noun).with_sense("s")]),
    ])
    .unwrap();
    let rows =
        vec![(OccurrenceKey::new("a", 1), vec![vec![0.0f32; 3]]), (OccurrenceKey::new("b", 1), vec![vec![1.0f32; 3]])];
    let store = store_of(&c, 3, rows);
    let p = enumerate_pairs(&c, Relation::SameWordSameSense, None, SamplerConfig::unlimited(0), WordIdentity::Surface)
        .unwrap();
    match sim_aggregate(&store, &c, &p, 1, Aggregation::Micro) {
        Err(MetricsError::ZeroNorm { key: Some(k) }) if k == OccurrenceKey::new("a", 1) => {}
        other => return Err(format!("zero row: {other:?}")),
    }
    Ok(format!("1000 draws; max scale drift {worst:.1e}; zero norm rejected"))
}

// ---------------------------------------------------------------- 3

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_commands() -> Vec<Vec<&'static str>> {
    let sense = ["--corpus", "sense/corpus.jsonl", "--store", "sense/plain.semb"];
    let with = |extra: &[&'static str], head: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(extra).copied().collect()
    };
    let mut cmds = vec![
        vec!["--out", "sense", "synth", "--kind", "sense"],
        vec!["--out", "pos", "synth", "--kind", "position"],
        vec!["--out", "wic", "synth", "--kind", "wic", "--size", "200"],
        vec!["--out", "r", "ingest", "--corpus", "sense/corpus.jsonl"],
        vec!["--out", "r", "stats", "--corpus", "sense/corpus.jsonl"],
        with(&sense, &["--out", "r", "sim", "--relation", "both", "--cap", "40"]),
        with(&sense, &["--out", "r", "layers"]),
        vec!["--out", "r/masked", "layers", "--corpus", "sense/corpus.jsonl", "--store", "sense/masked.semb"],
        vec!["--out", "r", "prompt-apply", "--corpus", "pos/corpus.jsonl"],
        vec![
            "--out",
            "r",
            "bias",
            "--corpus",
            "pos/corpus.jsonl",
            "--store",
            "pos/plain.semb",
            "--prompted",
            "pos/P1.semb=pos/P1.map.json",
            "--prompted",
            "pos/P2.semb=pos/P2.map.json",
        ],
        with(
            &sense,
            &[
                "--out",
                "r",
                "probe-train",
                "--train-size",
                "80",
                "--eval-size",
                "20",
                "--epochs",
                "3",
                "--layers",
                "1,last",
            ],
        ),
        vec![
            "--out",
            "r",
            "probe-eval",
            "--checkpoint",
            "r/probe_mlp_L4.sprb",
            "--dataset",
            "r/probe_dataset.json",
            "--store",
            "sense/plain.semb",
        ],
        vec![
            "--out",
            "r",
            "wsd-fit",
            "--data",
            "wic/train.data.txt",
            "--gold",
            "wic/train.gold.txt",
            "--store",
            "wic/train.semb",
            "--prompted",
            "wic/train_P1.semb=wic/train_P1.map.json",
        ],
        vec![
            "--out",
            "r",
            "wsd-eval",
            "--data",
            "wic/dev.data.txt",
            "--gold",
            "wic/dev.gold.txt",
            "--store",
            "wic/dev.semb",
            "--prompted",
            "wic/dev_P1.semb=wic/dev_P1.map.json",
            "--thresholds",
            "r/wsd_thresholds.json",
        ],
        vec!["--out", "r", "wsd-corpus", "--data", "wic/dev.data.txt", "--split", "dev"],
        vec!["--out", "r", "report", "--merge", "r/layers.csv", "r/masked/layers.csv"],
    ];
    for by in ["pos", "n_senses", "sent_len", "rel_dist", "position_index"] {
        let out: &'static str = Box::leak(format!("r/{by}").into_boxed_str());
        cmds.push(with(&sense, &["--out", out, "breakdown", "--relation", "both", "--by", by]));
    }
    cmds
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cmds = cli_commands();
    let mut runs = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "4"), ("d", "3")] {
        let cwd = root.path().join(tag);
        std::fs::create_dir(&cwd).unwrap();
        for cmd in &cmds {
            let out = Command::new(env!("CARGO_BIN_EXE_sensevar"))
                .current_dir(&cwd)
                .env_remove("SENSEVAR_OUT")
                .args(["--seed", "5", "--threads", threads])
                .args(cmd)
                .output()
                .unwrap();
            ensure!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        runs.push(files_under(&cwd));
    }
    for (i, r) in runs.iter().enumerate().skip(1) {
        ensure!(r.keys().eq(runs[0].keys()), "run {i} wrote a different file set");
        if let Some((p, _)) = r.iter().find(|(p, bytes)| runs[0][*p] != **bytes) {
            return Err(format!("run {i}: {} differs", p.display()));
        }
    }
    Ok(format!("{} commands, {} files identical across 4 runs at 1, 1, 4 and 3 threads", cmds.len(), runs[0].len()))
}

// ---------------------------------------------------------------- 4

fn sampling_soundness() -> Outcome {
    let n = 142;
    let dim = 16;
    let c = Corpus::from_sentences(
        (0..n).map(|i| Sentence::new(format!("g{i}"), vec![Token::new("w", Pos::Noun).with_sense("s")])).collect(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let anchor = gaussian(&mut rng, dim);
    let rows = (0..n)
        .map(|i| {
            let w = rng.random_range(0.0..1.5);
            let v = anchor.iter().zip(gaussian(&mut rng, dim)).map(|(a, e)| (w * a + e) as f32).collect();
            (OccurrenceKey::new(format!("g{i}"), 1), vec![v])
        })
        .collect();
    let store = store_of(&c, dim, rows);
    let exact_pairs =
        enumerate_pairs(&c, Relation::SameWordSameSense, None, SamplerConfig::unlimited(0), WordIdentity::Surface)
            .unwrap();
    let total = exact_pairs.pair_count_exact();
    ensure!(total >= 10_000, "group has {total} pairs");
    let exact = sim_aggregate(&store, &c, &exact_pairs, 1, Aggregation::Micro).unwrap().global.sim_value.unwrap();
    let cos: Vec<f64> = exact_pairs
        .iter_pairs()
        .map(|(a, b)| {
            naive_cos(&store.get_vector(&c.key(a), 1).unwrap().values, &store.get_vector(&c.key(b), 1).unwrap().values)
        })
        .collect();
    let sd = (cos.iter().map(|x| (x - exact).powi(2)).sum::<f64>() / cos.len() as f64).sqrt();
    let cap = 1000;
    // Sampling without replacement: include the finite-population correction.
    let fpc = ((total - cap) as f64 / (total - 1) as f64).sqrt();
    let se = sd / (cap as f64).sqrt() * fpc;
    let mut pass = 0;
    for seed in 0..100 {
        let p = enumerate_pairs(
            &c,
            Relation::SameWordSameSense,
            None,
            SamplerConfig::capped(cap, seed),
            WordIdentity::Surface,
        )
        .unwrap();
        ensure!(p.pair_count_used() == cap, "seed {seed}: used {}", p.pair_count_used());
        let m = sim_aggregate(&store, &c, &p, 1, Aggregation::Micro).unwrap().global.sim_value.unwrap();
        if (m - exact).abs() <= 3.0 * se {
            pass += 1;
        }
    }
    ensure!(pass >= 95, "{pass}/100 within 3 SE");
    Ok(format!("{pass}/100 seeds within 3 SE (cap {cap} of {total} pairs, SE {se:.4})"))
}

// ---------------------------------------------------------------- 5

fn excess(r: &SimReport, label: &str) -> f64 {
    let target = r.bucket(label).unwrap().mean_cosine.unwrap();
    let others: Vec<f64> = r.buckets.iter().filter(|b| b.bucket != label).filter_map(|b| b.mean_cosine).collect();
    target - mean(&others).unwrap()
}

fn position_bias() -> Outcome {
    let cfg = PositionFixtureConfig::default();
    let f = position_bias_fixture(&cfg);
    let report = |s: &EmbeddingStore| {
        position_similarity(s, &f.corpus, &Buckets::positions(), SamplerConfig::default(), 1, Aggregation::Micro)
            .unwrap()
    };
    let before = report(&f.store());
    let e1 = excess(&before, "1");
    ensure!(e1 > 0.3, "bucket 1 excess {e1:.3}");
    let shifted = store_of(&f.corpus, cfg.dim, position_rows(&f.corpus, &cfg, 2));
    let after = report(&shifted);
    let (moved, left) = (excess(&after, "2-4"), excess(&after, "1"));
    let top = after
        .buckets
        .iter()
        .map(|b| (b.bucket.as_str(), excess(&after, &b.bucket)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    ensure!(top.0 == "2-4" && moved > 0.1, "after shift the largest excess is {} ({:.3})", top.0, top.1);
    ensure!(left < 0.1, "bucket 1 keeps excess {left:.3}");
    Ok(format!("bucket 1 excess {e1:.3}; after shift 2: bucket 2-4 {moved:.3}, bucket 1 {left:.3}"))
}

// ---------------------------------------------------------------- 6

fn probe_capacity() -> Outcome {
    let cfg = ProbeConfig { lr: 0.05, epochs: 40, batch: 32, hidden_size: 32, seed: 1 };
    let acc = |s, kind, seed| {
        let train = pair_features(s, 2000, 8, seed);
        let eval = pair_features(s, 500, 8, seed + 100);
        train_features(&train, kind, cfg, 1).unwrap().accuracy(&eval).unwrap()
    };
    let sep = acc(PairStructure::Separable, ProbeKind::Linear, 1);
    let xor_lin = acc(PairStructure::Xor, ProbeKind::Linear, 3);
    let xor_mlp = acc(PairStructure::Xor, ProbeKind::Mlp, 3);
    ensure!(sep >= 0.99, "separable linear {sep}");
    ensure!(xor_lin <= 0.60, "xor linear {xor_lin}");
    ensure!(xor_mlp >= 0.95, "xor mlp {xor_mlp}");

    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in [ProbeKind::Linear, ProbeKind::Mlp] {
        let data = pair_features(PairStructure::Xor, 32, 3, 5);
        let mut m = ProbeModel::init(kind, data.width(), ProbeConfig { hidden_size: 6, seed: 2, ..cfg }, 1);
        m.params.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
        let rows: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = m.loss_and_grad(&m.params, &data, &rows);
        let eps = 1e-6;
        for _ in 0..25 {
            let k = rng.random_range(0..m.param_count());
            let (mut plus, mut minus) = (m.params.clone(), m.params.clone());
            plus[k] += eps;
            minus[k] -= eps;
            let fd = (m.loss_and_grad(&plus, &data, &rows).0 - m.loss_and_grad(&minus, &data, &rows).0) / (2.0 * eps);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-8);
            ensure!(rel < 1e-4, "{kind} param {k}: {} vs {fd}", grad[k]);
            worst = worst.max(rel);
        }
    }
    Ok(format!("separable {sep:.3}; xor linear {xor_lin:.3}, mlp {xor_mlp:.3}; worst gradient rel error {worst:.1e}"))
}

// ---------------------------------------------------------------- 7

fn accuracy_at(t: f64, cos: &[f64], gold: &[bool]) -> f64 {
    cos.iter().zip(gold).filter(|(&c, &g)| (c > t) == g).count() as f64 / cos.len() as f64
}

fn threshold_fit() -> Outcome {
    let draw = |seed, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (neg, pos) = (Normal::new(0.3, 0.15).unwrap(), Normal::new(0.6, 0.15).unwrap());
        (0..n)
            .map(|i| {
                let g = i % 2 == 1;
                let c: f64 = if g { pos.sample(&mut rng) } else { neg.sample(&mut rng) };
                (c.clamp(-1.0, 1.0), g)
            })
            .unzip::<f64, bool, Vec<f64>, Vec<bool>>()
    };
    let mut worst: f64 = 0.0;
    let mut thresholds = Vec::new();
    for seed in 0..20 {
        let (cos, gold) = draw(seed, 200);
        let (held_c, held_g) = draw(seed + 1000, 10_000);
        let (t, _) = fit_threshold_scores(&cos, &gold).unwrap();
        // Exhaustive sweep over a 1e-4 grid.
        let oracle = (0..=20_000)
            .map(|k| -1.0 + k as f64 * 1e-4)
            .fold((f64::NEG_INFINITY, 0.0), |best, t| {
                let a = accuracy_at(t, &cos, &gold);
                if a > best.0 {
                    (a, t)
                } else {
                    best
                }
            })
            .1;
        let gap = (accuracy_at(t, &held_c, &held_g) - accuracy_at(oracle, &held_c, &held_g)).abs();
        ensure!(gap <= 0.02, "seed {seed}: held-out gap {gap}");
        worst = worst.max(gap);
        thresholds.push(t);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let (c, t1) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let t2: f64 = rng.random_range(t1..=1.0);
        let lo = ThresholdModel { layer: 1, threshold: t1, fit_split: "x".into(), fit_accuracy: 0.0 };
        let hi = ThresholdModel { threshold: t2, ..lo.clone() };
        ensure!(!hi.classify(c) || lo.classify(c), "raising {t1} to {t2} turned {c} on");
    }
    for trial in 0..500 {
        let n = rng.random_range(1..120);
        let instances: Vec<WicInstance> = (0..n)
            .map(|_| {
                let idx = if rng.random_bool(0.3) { 1 } else { 2 };
                WicInstance {
                    id: String::new(),
                    word: "w".into(),
                    pos: Pos::Noun,
                    sent_a: vec!["w".into(); 2],
                    sent_b: vec!["w".into(); 2],
                    idx_a: idx,
                    idx_b: 1,
                    gold: Some(rng.random_bool(0.5)),
                }
            })
            .collect();
        let cos: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let m = ThresholdModel {
            layer: 1,
            threshold: rng.random_range(-1.0..1.0),
            fit_split: "x".into(),
            fit_accuracy: 0.0,
        };
        let r = evaluate_scores(&instances, &cos, &m).unwrap();
        ensure!(r.first_word.n + r.others.n == n, "trial {trial}: slice sizes");
        let correct = r.first_word.correct + r.others.correct;
        ensure!(r.accuracy == correct as f64 / n as f64, "trial {trial}: slices do not recompose");
    }
    let mean_t = mean(&thresholds).unwrap();
    Ok(format!("20 seeds, worst held-out gap {worst:.4}; mean threshold {mean_t:.3} (Bayes 0.45); invariants exact"))
}

// ---------------------------------------------------------------- 8

fn throughput() -> Outcome {
    let (n, dim) = (1415, 768);
    let c = Corpus::from_sentences(
        (0..n).map(|i| Sentence::new(format!("t{i}"), vec![Token::new("w", Pos::Noun).with_sense("s")])).collect(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows = (0..n)
        .map(|i| {
            (
                OccurrenceKey::new(format!("t{i}"), 1),
                vec![gaussian(&mut rng, dim).into_iter().map(|x| x as f32).collect()],
            )
        })
        .collect();
    let store = store_of(&c, dim, rows);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let t0 = Instant::now();
            let p = enumerate_pairs(
                &c,
                Relation::SameWordSameSense,
                None,
                SamplerConfig::unlimited(0),
                WordIdentity::Surface,
            )
            .unwrap();
            let r = sim_aggregate(&store, &c, &p, 1, Aggregation::Micro).unwrap();
            (t0.elapsed(), r)
        })
    };
    let (t1, r1) = run(1);
    let pairs = r1.global.pair_count_used;
    ensure!(pairs >= 1_000_000, "only {pairs} pairs");
    ensure!(t1 < Duration::from_secs(5), "{pairs} pairs took {t1:?} on one thread");
    let (t4, r4) = run(4);
    ensure!(serde_json::to_string(&r1).unwrap() == serde_json::to_string(&r4).unwrap(), "4 threads changed the output");
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let scaling = if cores >= 4 {
        let speedup = t1.as_secs_f64() / t4.as_secs_f64();
        ensure!(speedup >= 3.0, "speedup at 4 threads only {speedup:.2}");
        format!("speedup {speedup:.2} at 4 threads")
    } else {
        format!("scaling not measurable on {cores} core(s)")
    };
    Ok(format!("{pairs} pairs at dim {dim}: {:.2} s on 1 thread; 4 threads identical; {scaling}", t1.as_secs_f64()))
}

// ---------------------------------------------------------------- 9

fn random_corpus(rng: &mut impl Rng) -> Corpus {
    let words = ["bank", "shore", "run", "sprint", "fast", "quick", "x", "y"];
    let sentences = (0..rng.random_range(3..12))
        .map(|s| {
            let tokens = (0..rng.random_range(1..10))
                .map(|_| {
                    let w = words[rng.random_range(0..words.len())];
                    let t = Token::new(w, Pos::Noun);
                    if rng.random_bool(0.5) {
                        t.with_sense(format!("{w}.n.{}", rng.random_range(1..3)))
                    } else {
                        t
                    }
                })
                .collect();
            Sentence::new(format!("f{s}"), tokens)
        })
        .collect();
    Corpus::from_sentences(sentences).unwrap()
}

fn mutate(c: &Corpus, rng: &mut impl Rng) -> Option<Corpus> {
    let mut sentences = c.sentences().to_vec();
    let s = rng.random_range(0..sentences.len());
    let t = rng.random_range(0..sentences[s].tokens.len());
    let tok = &mut sentences[s].tokens[t];
    match rng.random_range(0..7) {
        0 => tok.surface.push('s'),
        1 => tok.pos = Pos::Verb,
        2 => tok.lemma = Some(format!("{}-l", tok.surface)),
        3 => {
            tok.sense = match tok.sense.take() {
                Some(_) => None,
                None => Some(sensevar::SenseId::new("other.n.9")),
            }
        }
        4 => sentences[s].tokens.insert(t, Token::new("z", Pos::Other)),
        5 if sentences[s].tokens.len() > 1 => {
            sentences[s].tokens.remove(t);
        }
        6 => sentences[s].id.push('x'),
        _ => return None,
    }
    Corpus::from_sentences(sentences).ok()
}

fn store_format() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-45, f32::MAX, -f32::MAX, 1.0 / 3.0];
    let mut stores = 0;
    let mut caught = 0;
    for round in 0..20 {
        let c = random_corpus(&mut rng);
        let (n_layers, dim) = (rng.random_range(1..5u32), rng.random_range(1..40usize));
        let rows: Vec<(OccurrenceKey, Vec<Vec<f32>>)> = c
            .all_occurrences()
            .map(|o| {
                let layers = (0..n_layers)
                    .map(|_| {
                        (0..dim)
                            .map(|_| {
                                if rng.random_bool(0.1) {
                                    specials[rng.random_range(0..specials.len())]
                                } else {
                                    rng.random::<f32>() * 8.0 - 4.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                (c.key(o), layers)
            })
            .collect();
        let mut m = EmbeddingManifest::new(format!("m{round}"), n_layers, dim as u32, Variant::Plain, &c);
        m.includes_embedding_layer = rng.random_bool(0.5);
        let path = dir.path().join(format!("s{round}.semb"));
        let written = write_store(&m, rows.clone(), &path).map_err(|e| e.to_string())?;
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        ensure!(
            len == expected_file_size(&written),
            "round {round}: size {len} vs formula {}",
            expected_file_size(&written)
        );
        let store = EmbeddingStore::open_aligned(&path, &c).map_err(|e| e.to_string())?;
        ensure!(store.byte_len() == len, "round {round}: mapped length");
        for (key, layers) in &rows {
            for (l, want) in (store.first_layer()..=store.last_layer()).zip(layers) {
                let got = store.get_vector(key, l).map_err(|e| e.to_string())?.values;
                ensure!(
                    got.iter().map(|x| x.to_bits()).eq(want.iter().map(|x| x.to_bits())),
                    "round {round}: {key} L{l} not bit-exact"
                );
            }
        }
        stores += 1;
        for _ in 0..50 {
            let Some(changed) = mutate(&c, &mut rng) else { continue };
            match EmbeddingStore::open_aligned(&path, &changed) {
                Err(StoreError::FingerprintMismatch { .. }) => caught += 1,
                other => return Err(format!("round {round}: mutation not caught ({:?})", other.map(|_| ()))),
            }
        }
    }
    ensure!(caught >= 500, "only {caught} mutations tried");
    Ok(format!("{stores} stores bit-exact with formula sizes; {caught}/{caught} corpus mutations caught"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("cosine properties", cosine_properties),
        ("CLI determinism", cli_determinism),
        ("sampling soundness", sampling_soundness),
        ("position bias fixture", position_bias),
        ("probe capacity", probe_capacity),
        ("threshold fit", threshold_fit),
        ("throughput", throughput),
        ("store format", store_format),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
