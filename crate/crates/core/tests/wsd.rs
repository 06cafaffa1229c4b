use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sensevar::bias::PromptTemplate;
use sensevar::synth::{wic_fixture, WicFixtureConfig};
use sensevar::wsd::{
    evaluate_with_prompt, fit_threshold, fit_threshold_scores, load_wic, write_wic, WicCondition, WicInstance,
    WicSource, WicSplits, WsdError,
};
use sensevar::{EmbeddingStore, Pos};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn three_instances_round_trip() {
    let inst = |i: usize, word: &str, pos, a: &str, b: &str, ia, ib, g| WicInstance {
        id: format!("rt{i:05}"),
        word: word.into(),
        pos,
        sent_a: words(a),
        sent_b: words(b),
        idx_a: ia,
        idx_b: ib,
        gold: Some(g),
    };
    let v = vec![
        inst(0, "bank", Pos::Noun, "The bank raised rates .", "We sat on the bank .", 2, 5, false),
        inst(1, "run", Pos::Verb, "Run home now .", "They run a shop .", 1, 2, false),
        inst(2, "quick", Pos::Adj, "A quick reply .", "Quick thinking saved us .", 2, 1, true),
    ];
    let (data, gold) = write_wic(&v);
    let back = load_wic(data.as_bytes(), Some(gold.unwrap().as_bytes()), "rt").unwrap();
    assert_eq!(back, v);
}

/// Best accuracy over a dense grid of thresholds.
fn sweep(cos: &[f64], gold: &[bool]) -> f64 {
    let acc = |t: f64| cos.iter().zip(gold).filter(|(&c, &g)| (c > t) == g).count() as f64 / cos.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=20_000 {
        let t = -1.0 + k as f64 * 1e-4;
        if acc(t) > best.0 {
            best = (acc(t), t);
        }
    }
    best.1
}

#[test]
fn overlapping_gaussians_near_sweep_oracle() {
    let draw = |seed, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (neg, pos) = (Normal::new(0.3, 0.15).unwrap(), Normal::new(0.6, 0.15).unwrap());
        let mut cos = Vec::new();
        let mut gold = Vec::new();
        for i in 0..n {
            let g = i % 2 == 1;
            let c: f64 = if g { pos.sample(&mut rng) } else { neg.sample(&mut rng) };
            cos.push(c.clamp(-1.0, 1.0));
            gold.push(g);
        }
        (cos, gold)
    };
    let acc = |t: f64, cos: &[f64], gold: &[bool]| {
        cos.iter().zip(gold).filter(|(&c, &g)| (c > t) == g).count() as f64 / cos.len() as f64
    };
    for seed in 0..20 {
        let (cos, gold) = draw(seed, 200);
        let (held_c, held_g) = draw(seed + 1000, 10_000);
        let (t, _) = fit_threshold_scores(&cos, &gold).unwrap();
        let oracle = sweep(&cos, &gold);
        let (fit_acc, oracle_acc) = (acc(t, &held_c, &held_g), acc(oracle, &held_c, &held_g));
        assert!((fit_acc - oracle_acc).abs() <= 0.02, "seed {seed}: {fit_acc} vs {oracle_acc}");
        // Bayes-optimal threshold is 0.45; 200 fit samples leave some slack.
        assert!(fit_acc >= acc(0.45, &held_c, &held_g) - 0.06);
    }
}

struct Setup {
    instances: Vec<WicInstance>,
    store: EmbeddingStore,
    prompted: Vec<(String, EmbeddingStore, sensevar::bias::PromptedCorpusMap)>,
}

fn setup() -> Setup {
    let f = wic_fixture(&WicFixtureConfig::default());
    let prompted = PromptTemplate::builtins()
        .iter()
        .map(|t| {
            let (_, map, bytes) = f.prompted(t);
            (t.id.clone(), EmbeddingStore::from_bytes(bytes).unwrap(), map)
        })
        .collect();
    Setup { store: f.store(), instances: f.instances, prompted }
}

#[test]
fn prompts_help_sentence_initial_targets() {
    let s = setup();
    let (fit, eval) = s.instances.split_at(200);
    let splits = WicSplits { fit, fit_name: "train", eval, eval_name: "dev" };
    let orig = WicCondition { fit: WicSource::plain(&s.store), eval: WicSource::plain(&s.store) };
    let conds: Vec<(&str, WicCondition)> = s
        .prompted
        .iter()
        .map(|(id, st, m)| {
            (id.as_str(), WicCondition { fit: WicSource::prompted(st, m), eval: WicSource::prompted(st, m) })
        })
        .collect();
    let r = evaluate_with_prompt(&splits, &orig, &conds, &[1, 2, 3, 4]).unwrap();
    assert_eq!(r.conditions.len(), 4);
    let base = &r.conditions[0];
    assert!(base.layers[3].accuracy > base.layers[0].accuracy);
    assert!(base.layers[3].first_word.accuracy.unwrap() < base.layers[3].others.accuracy.unwrap());
    for c in &r.conditions[1..] {
        let d = c.delta_first_word.as_ref().unwrap()[3].unwrap();
        assert!(d > 0.0, "{}: first-word delta {d}", c.condition);
        assert!(c.delta_accuracy.as_ref().unwrap()[3] > -0.01);
    }
}

#[test]
fn identity_prompt_reproduces_original() {
    let f = wic_fixture(&WicFixtureConfig { n_instances: 120, ..Default::default() });
    let (_, map, bytes) = f.prompted(&PromptTemplate::identity());
    let store = f.store();
    let pstore = EmbeddingStore::from_bytes(bytes).unwrap();
    let (fit, eval) = f.instances.split_at(60);
    let splits = WicSplits { fit, fit_name: "train", eval, eval_name: "dev" };
    let orig = WicCondition { fit: WicSource::plain(&store), eval: WicSource::plain(&store) };
    let ident = WicCondition { fit: WicSource::prompted(&pstore, &map), eval: WicSource::prompted(&pstore, &map) };
    let r = evaluate_with_prompt(&splits, &orig, &[("identity", ident)], &[1, 4]).unwrap();
    assert_eq!(r.conditions[0].layers, r.conditions[1].layers);
    assert!(r.conditions[1].delta_accuracy.as_ref().unwrap().iter().all(|&d| d == 0.0));
}

#[test]
fn missing_prompted_dump_names_prompt() {
    let s = setup();
    let (_, _, map) = &s.prompted[1];
    // The unprompted store lacks the shifted keys.
    let src = WicSource::prompted(&s.store, map);
    match fit_threshold(&s.instances, &src, 1, "train") {
        Err(e @ WsdError::MissingEmbedding { .. }) => assert!(e.to_string().contains("P2"), "{e}"),
        other => panic!("{other:?}"),
    }
    let (_, other_store, _) = &s.prompted[0];
    assert!(matches!(
        fit_threshold(&s.instances, &WicSource::prompted(other_store, map), 1, "train"),
        Err(WsdError::PromptMismatch { .. })
    ));
}

#[test]
fn empty_fit_is_an_error() {
    let s = setup();
    assert!(matches!(fit_threshold(&[], &WicSource::plain(&s.store), 1, "train"), Err(WsdError::Empty)));
}
