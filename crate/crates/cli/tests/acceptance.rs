//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use npcsmith_core::configgen::{validate_config, RawConfig};
use npcsmith_core::emit::{package_modpack, GIFT_DIALOGUES_KEY};
use npcsmith_core::gifts::{bundled_item_names, cosine_similarity, match_gifts, top_k_items, GiftError, ItemCatalog};
use npcsmith_core::grammar::{format_route, parse_dialogue_key, parse_route, Strictness, Whitelist};
use npcsmith_core::llm::embedders::{HashedNgram, LetterBag};
use npcsmith_core::llm::fixtures::{FixtureStore, Replayer};
use npcsmith_core::llm::scripted::{AuthoredScript, ScriptedProvider};
use npcsmith_core::llm::{coerce_structured, ChatRequest, EmbeddingVector, Gateway, GatewayError, ProviderError};
use npcsmith_core::model::{DailySchedule, DialogueKey, Manner, Optimism, PersonalityProfile, ScheduleEntry, SocialAnxiety, Weekday};
use npcsmith_core::packcheck::raw_config_of;
use npcsmith_core::session::{AtomicFileWriter, Snapshot, SnapshotStore};
use npcsmith_core::{run_pipeline, Op, PackageTarget, Resources, SessionError, SessionService, SessionStage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const FIXTURES: [&str; 4] = ["larry", "jake", "prischa", "niklas"];
const WHITELIST_TEXT: &str = include_str!("../../core/resources/whitelist.txt");

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn replay_gateway(name: &str) -> Gateway {
    let store = FixtureStore::open(root().join("fixtures").join(name)).expect("fixture store");
    Gateway::new(Arc::new(Replayer::new(store)))
}

fn description(name: &str) -> String {
    std::fs::read_to_string(root().join("fixtures").join(name).join("description.txt")).unwrap()
}

fn script(name: &str) -> AuthoredScript {
    let text = std::fs::read_to_string(root().join("fixtures/scripts").join(format!("{name}.json"))).unwrap();
    AuthoredScript::from_json(&text).unwrap()
}

// ---------------------------------------------------------------- grammar

fn location_name(r: &mut ChaCha8Rng) -> String {
    const PARTS: &[&str] = &["Town", "Saloon", "Beach", "SeedShop", "Forest", "Mountain", "Farm", "Custom", "Trail2", "ArchaeologyHouse"];
    let n = r.random_range(1..=3);
    (0..n).map(|_| *PARTS.choose(r).unwrap()).collect::<Vec<_>>().join("_")
}

fn random_route(r: &mut ChaCha8Rng) -> Vec<ScheduleEntry> {
    let n = r.random_range(1..=6);
    let mut slots: BTreeSet<u16> = BTreeSet::new();
    while slots.len() < n {
        slots.insert(600 + 10 * r.random_range(0..=200u16));
    }
    slots
        .into_iter()
        .map(|time| ScheduleEntry {
            time,
            location: location_name(r),
            x: r.random_range(0..400),
            y: r.random_range(0..400),
            direction: r.random_range(0..=3),
        })
        .collect()
}

fn schedule_text(s: &DailySchedule) -> Vec<(Weekday, String)> {
    s.iter().map(|(d, e)| (d, format_route(e))).collect()
}

fn grammar_round_trip() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    for i in 0..1000 {
        let days: BTreeMap<Weekday, Vec<ScheduleEntry>> = Weekday::ALL.iter().map(|d| (*d, random_route(&mut r))).collect();
        let schedule = DailySchedule::new(days).map_err(|e| e.to_string())?;
        let first = schedule_text(&schedule);
        let reparsed: BTreeMap<Weekday, Vec<ScheduleEntry>> = first
            .iter()
            .map(|(d, text)| parse_route(text, Strictness::Strict).map(|e| (*d, e)))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("schedule {i}: {e}"))?;
        let again = DailySchedule::new(reparsed).map_err(|e| e.to_string())?;
        ensure(again == schedule, || format!("schedule {i} changed on re-parse"))?;
        ensure(schedule_text(&again) == first, || format!("schedule {i} text changed"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("1000 schedules in {took:.2?}"))
}

// -------------------------------------------------------------- whitelist

fn whitelist_closure() -> Check {
    // oracle: the tuples as written in the resource file, searched linearly
    let oracle: Vec<(String, u32, u32, u8)> = WHITELIST_TEXT
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_owned(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    let whitelist = Whitelist::bundled();
    ensure(whitelist.len() == oracle.len(), || format!("{} loaded, {} in file", whitelist.len(), oracle.len()))?;
    let locations: Vec<String> = oracle.iter().map(|t| t.0.clone()).collect();
    let mut r = rng(2);
    let (mut false_accepts, mut false_rejects, mut members) = (0, 0, 0);
    for _ in 0..10_000 {
        let (mut loc, mut x, mut y, mut d) = oracle.choose(&mut r).unwrap().clone();
        match r.random_range(0..6) {
            0 => loc = locations.choose(&mut r).unwrap().clone(),
            1 => x = x.saturating_add_signed(r.random_range(-2..=2)),
            2 => y = y.saturating_add_signed(r.random_range(-2..=2)),
            3 => d = r.random_range(0..=3),
            4 => {
                x = r.random_range(0..120);
                y = r.random_range(0..120);
            }
            _ => {}
        }
        let expected = oracle.iter().any(|t| t.0 == loc && t.1 == x && t.2 == y && t.3 == d);
        members += usize::from(expected);
        let route = format!("{} {loc} {x} {y} {d}", r.random_range(60..=260) * 10);
        let raw = RawConfig {
            schedule: [("Mon".to_owned(), route)].into(),
            ..RawConfig::default()
        };
        let report = validate_config(&raw, &whitelist);
        let accepted = !report.violations.iter().any(|v| v.location == "schedule.Mon.0");
        match (accepted, expected) {
            (true, false) => false_accepts += 1,
            (false, true) => false_rejects += 1,
            _ => {}
        }
    }
    ensure(false_accepts + false_rejects == 0, || {
        format!("{false_accepts} false accepts, {false_rejects} false rejects")
    })?;
    Ok(format!(
        "10000 entries ({members} members), 0 disagreements; whitelist holds {} stops",
        oracle.len()
    ))
}

// ----------------------------------------------------------- dialogue keys

fn random_key(r: &mut ChaCha8Rng) -> DialogueKey {
    match r.random_range(0..3) {
        0 => DialogueKey::DayOfMonth(r.random_range(1..=10)),
        1 => DialogueKey::DayOfWeek(*Weekday::ALL.choose(r).unwrap()),
        _ => DialogueKey::Location {
            location: location_name(r),
            x: r.random_range(0..1000),
            y: r.random_range(0..1000),
        },
    }
}

fn dialogue_key_totality() -> Check {
    let mut r = rng(3);
    for _ in 0..10_000 {
        let key = random_key(&mut r);
        let text = key.to_string();
        ensure(parse_dialogue_key(&text).as_ref() == Ok(&key), || format!("{text:?} does not re-parse"))?;
    }
    let alphabet: Vec<char> = "0123456789_MonTueSatxyzAB".chars().collect();
    let mut accepted = 0;
    for _ in 0..10_000 {
        let len = r.random_range(0..12);
        let s: String = (0..len).map(|_| *alphabet.choose(&mut r).unwrap()).collect();
        if let Ok(key) = parse_dialogue_key(&s) {
            accepted += 1;
            ensure(key.to_string() == s, || format!("{s:?} parsed to non-canonical {key}"))?;
        }
    }
    for bad in ["Mountain_76_14_2", "11", "0", "07", "mon", "Town_1", "_1_2", ""] {
        ensure(parse_dialogue_key(bad).is_err(), || format!("{bad:?} was accepted"))?;
    }
    Ok(format!("10000 keys round-trip; {accepted}/10000 random strings accepted, all canonical"))
}

// ----------------------------------------------------------------- retries

fn retry_budget() -> Check {
    let request = ChatRequest::new("hello");
    for n in 0..=10usize {
        let mut script: Vec<Result<String, ProviderError>> =
            (0..n).map(|i| Err(ProviderError::Connection(format!("down {i}")))).collect();
        script.push(Ok("reply".into()));
        let provider = Arc::new(ScriptedProvider::new(script));
        let result = Gateway::new(provider.clone()).chat_complete(&request);
        let calls = provider.chat_calls();
        ensure(calls == (n + 1).min(6), || format!("N={n}: {calls} calls"))?;
        match (n >= 6, &result) {
            (true, Err(GatewayError::ExhaustedRetries { attempts: 6, .. })) | (false, Ok(_)) => {}
            _ => return Err(format!("N={n}: {result:?}")),
        }
    }
    let provider = Arc::new(ScriptedProvider::new(vec![Err(ProviderError::Refusal("no".into()))]));
    let result = Gateway::new(provider.clone()).chat_complete(&request);
    ensure(provider.chat_calls() == 1 && matches!(result, Err(GatewayError::Provider(_))), || {
        "refusal was retried".into()
    })?;
    Ok("N=0..10 call counts match min(N+1, 6); refusals are not retried".into())
}

// ---------------------------------------------------------------- coercion

fn coercion_repair() -> Check {
    let docs = [
        json!({"a": 1, "b": [1, 2, 3]}),
        json!([{"title": "One"}, {"title": "Two"}, {"title": "Three"}]),
        json!({"name": "Larry", "nested": {"braces": "{ not a brace }", "q": "say \"hi\""}}),
        json!({"schedule": {"Mon": "900 Town 1 2 3"}, "dialogues": {}}),
        json!([1, "two", null, true]),
    ];
    let mut corpus: Vec<(String, Option<&Value>)> = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let compact = d.to_string();
        let pretty = serde_json::to_string_pretty(d).unwrap();
        corpus.push((if i % 2 == 0 { compact.clone() } else { pretty.clone() }, Some(d)));
        corpus.push((format!("```json\n{pretty}\n```"), Some(d)));
        corpus.push((format!("Sure! Here is the result:\n{compact}\nLet me know if you need changes."), Some(d)));
        let trailing = match d {
            Value::Object(_) => format!("{},}}", &compact[..compact.len() - 1]),
            _ => format!("{},]", &compact[..compact.len() - 1]),
        };
        corpus.push((trailing, None));
    }
    ensure(corpus.len() == 20, || "corpus size".into())?;
    let mut repaired = 0;
    for (i, (raw, expected)) in corpus.iter().enumerate() {
        let got = coerce_structured(raw);
        match (expected, &got) {
            (Some(want), Ok(doc)) => {
                ensure(doc == *want, || format!("case {i}: wrong document {doc}"))?;
                repaired += 1;
            }
            (None, Err(_)) => {}
            (Some(_), Err(e)) => return Err(format!("case {i}: {e}")),
            (None, Ok(doc)) => return Err(format!("case {i}: trailing comma accepted as {doc}")),
        }
        if let Ok(doc) = got {
            for text in [doc.to_string(), serde_json::to_string_pretty(&doc).unwrap()] {
                ensure(coerce_structured(&text).as_ref() == Ok(&doc), || format!("case {i}: not idempotent"))?;
            }
        }
    }
    Ok(format!("{repaired}/15 valid, fenced and prose cases coerce; 5 trailing-comma cases refused; idempotent"))
}

// ------------------------------------------------------------------ gifts

/// Exact comparison of letter-bag cosines: d1/sqrt(n1) vs d2/sqrt(n2) for
/// non-negative integer dot products.
fn exact_order(q: &[i64], items: &[Vec<i64>]) -> Vec<usize> {
    let dot = |v: &[i64]| q.iter().zip(v).map(|(a, b)| a * b).sum::<i64>() as i128;
    let norm = |v: &[i64]| v.iter().map(|a| a * a).sum::<i64>() as i128;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&i, &j| {
        let (ni, nj) = (norm(&items[i]), norm(&items[j]));
        match (ni == 0, nj == 0) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => {
                let (di, dj) = (dot(&items[i]), dot(&items[j]));
                (dj * dj * ni).cmp(&(di * di * nj))
            }
        }
    });
    idx
}

fn random_word(r: &mut ChaCha8Rng, letters: &[u8]) -> String {
    let len = r.random_range(1..=8);
    (0..len).map(|_| *letters.choose(r).unwrap() as char).collect()
}

fn gift_matcher_oracle() -> Check {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    let want = 32.0 / (14f64.sqrt() * 77f64.sqrt());
    ensure(close(c, want), || format!("cosine {c} != {want}"))?;
    ensure(close(cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0), || "orthogonal".into())?;
    let mut r = rng(6);
    for _ in 0..100 {
        let v: Vec<f64> = (0..26).map(|_| r.random_range(-5.0..5.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            ensure(close(cosine_similarity(&v, &v).unwrap(), 1.0), || "self similarity".into())?;
        }
    }

    let letters = b"abcdeeilnorst";
    let mut ties = 0;
    for case in 0..200 {
        let size = r.random_range(1..=50);
        let mut names: Vec<String> = Vec::with_capacity(size);
        for _ in 0..size {
            let name = match (names.choose(&mut r).cloned(), r.random_range(0..10)) {
                // permutations and repeats give exact ties
                (Some(prev), 0) => prev.chars().rev().collect(),
                (Some(prev), 1) => prev.repeat(2),
                (_, 2) => "42".to_owned(),
                _ => random_word(&mut r, letters),
            };
            names.push(name);
        }
        let counts: Vec<Vec<i64>> = names.iter().map(|n| LetterBag::vector(n).iter().map(|x| *x as i64).collect()).collect();
        let vectors = names.iter().map(|n| EmbeddingVector::new(LetterBag::vector(n)).unwrap()).collect();
        let catalog = ItemCatalog::from_parts(names.clone(), vectors).map_err(|e| e.to_string())?;
        let query_text = random_word(&mut r, letters);
        let q: Vec<i64> = LetterBag::vector(&query_text).iter().map(|x| *x as i64).collect();
        let query = EmbeddingVector::new(LetterBag::vector(&query_text)).unwrap();
        let k = r.random_range(1..=size);
        let got: Vec<usize> = top_k_items(&query, &catalog, k)
            .map_err(|e| format!("case {case}: {e}"))?
            .into_iter()
            .map(|item| item.index)
            .collect();
        let want: Vec<usize> = exact_order(&q, &counts).into_iter().take(k).collect();
        ties += usize::from(names.iter().collect::<BTreeSet<_>>().len() < names.len());
        ensure(got == want, || format!("case {case}: query {query_text:?} k={k}: {got:?} vs {want:?} over {names:?}"))?;
    }
    Ok(format!("cosine unit cases hold; 200 instances match the exact sort ({ties} with duplicate names)"))
}

fn random_profile(r: &mut ChaCha8Rng, items: &[String]) -> PersonalityProfile {
    const FOODS: &[&str] = &["tea", "beer", "fruit", "pizza", "spicy food", "fish", "vegetables", "sweets", "coffee", "eggs", "wine"];
    const POSITIVE: &[&str] = &["He likes", "She loves", "They enjoy", "He adores", "She is fond of", "I like"];
    const NEGATIVE: &[&str] = &["He hates", "She doesn't like", "They can't stand", "He dislikes", "She detests"];
    let things = |r: &mut ChaCha8Rng| -> String {
        let n = r.random_range(1..=4);
        (0..n)
            .map(|_| {
                if r.random_bool(0.5) {
                    items.choose(r).unwrap().to_lowercase()
                } else {
                    FOODS.choose(r).unwrap().to_string()
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let sentences = |r: &mut ChaCha8Rng| -> String {
        let n = r.random_range(1..=3);
        (0..n)
            .map(|_| {
                let verb = if r.random_bool(0.6) { POSITIVE.choose(r) } else { NEGATIVE.choose(r) }.unwrap();
                let except = if r.random_bool(0.2) { format!(" except {}", things(r)) } else { String::new() };
                format!("{verb} {}{except}.", things(r))
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    PersonalityProfile {
        characteristics: "Quiet".into(),
        job: "Farmer".into(),
        hobbies: "Reading".into(),
        food_and_drinks: sentences(r),
        others: sentences(r),
        manners: *[Manner::Polite, Manner::Rude, Manner::Neutral].choose(r).unwrap(),
        manners_description: "Fine".into(),
        social_anxiety: SocialAnxiety::Neutral,
        social_anxiety_description: "Fine".into(),
        optimism: Optimism::Neutral,
        optimism_description: "Fine".into(),
    }
}

fn preference_disjointness() -> Check {
    let gateway = Gateway::new(Arc::new(HashedNgram::default()));
    let names = bundled_item_names();
    let known: BTreeSet<&String> = names.iter().collect();
    let catalog = ItemCatalog::embed(names.clone(), &gateway).map_err(|e| e.to_string())?;
    let mut r = rng(7);
    let mut placed = 0;
    for i in 0..500 {
        let profile = random_profile(&mut r, &names);
        let prefs = match match_gifts(&profile, &catalog, &gateway) {
            Ok(p) => p,
            Err(GiftError::EmptyKeywordSet) => continue,
            Err(e) => return Err(format!("profile {i}: {e}")),
        };
        ensure(prefs.is_disjoint(), || format!("profile {i}: overlapping lists {prefs:?}"))?;
        for (list, items) in prefs.lists() {
            if let Some(bad) = items.iter().find(|n| !known.contains(n)) {
                return Err(format!("profile {i}: {list} item {bad:?} is not in the catalog"));
            }
            placed += items.len();
        }
    }
    Ok(format!("500 profiles, {placed} items placed, lists disjoint and from the catalog"))
}

// ------------------------------------------------------------- end to end

fn end_to_end_fixtures() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_npcsmith");
    let mut summary = Vec::new();
    for name in FIXTURES {
        let dir = tmp.path().join(name);
        let out = Command::new(bin)
            .arg("generate")
            .arg(root().join("fixtures").join(name).join("description.txt"))
            .arg("--replay")
            .arg(root().join("fixtures").join(name))
            .arg("--out")
            .arg(&dir)
            .env_remove("NPCSMITH_API_KEY")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.code() == Some(0), || format!("{name}: generate: {}", String::from_utf8_lossy(&out.stderr)))?;
        let files: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
        ensure(files.len() == 6, || format!("{name}: {} files", files.len()))?;
        let read = |f: &str| -> Value { serde_json::from_slice(&std::fs::read(dir.join(f)).unwrap()).unwrap() };
        let (schedules, dialogues) = (read("schedules.json"), read("dialogues.json"));
        let raw = raw_config_of(&schedules, &dialogues);
        let n = raw.dialogues.len();
        ensure((15..=20).contains(&n), || format!("{name}: {n} dialogues"))?;
        ensure(dialogues.get(GIFT_DIALOGUES_KEY).is_some(), || format!("{name}: no gift dialogues"))?;
        let days: BTreeSet<&str> = raw.schedule.keys().map(String::as_str).collect();
        ensure(days == Weekday::ALL.iter().map(|d| d.as_str()).collect(), || format!("{name}: days {days:?}"))?;
        ensure(raw.schedule["Mon"] == raw.schedule["Wed"] && raw.schedule["Mon"] == raw.schedule["Fri"], || {
            format!("{name}: Mon/Wed/Fri differ")
        })?;
        let status = Command::new(bin).arg("validate").arg(&dir).output().map_err(|e| e.to_string())?;
        ensure(status.status.code() == Some(0), || format!("{name}: validate: {}", String::from_utf8_lossy(&status.stdout)))?;
        summary.push(format!("{name} {n}"));
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("dialogues per pack: {}; {took:.2?}", summary.join(", ")))
}

fn emitter_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let resources = Resources::default();
    for name in FIXTURES {
        let mut archives = Vec::new();
        for run in 0..2 {
            let pipeline = run_pipeline(&description(name), 0, &replay_gateway(name), &resources, None).map_err(|e| e.to_string())?;
            for copy in 0..2 {
                let path = tmp.path().join(format!("{name}-{run}-{copy}.zip"));
                package_modpack(&pipeline.finalized.pack, &PackageTarget::Archive(path.clone())).map_err(|e| e.to_string())?;
                archives.push(std::fs::read(&path).unwrap());
            }
        }
        ensure(archives.windows(2).all(|w| w[0] == w[1]), || format!("{name}: archives differ"))?;
    }
    Ok("4 fixtures, 2 pipeline runs x 2 writes each, identical bytes".into())
}

// ---------------------------------------------------------------- session

fn random_op(r: &mut ChaCha8Rng, stage: SessionStage, descriptions: &[String]) -> Op {
    const EDITS: &[(&str, &str)] = &[
        ("personality.manners", "Rude"),
        ("personality.optimism", "Positive"),
        ("personality.socialAnxiety", "Grumpy"),
        ("personality.job", "Baker"),
        ("personality.job", " "),
        ("personality.foodAndDrinks", "He loves coffee and hates fish."),
        ("sampleDialogues.0", "Howdy."),
        ("sampleDialogues.9", "Nope."),
        ("name", "Bob"),
        ("birthday", "Winter 3"),
        ("birthday", "Winter 31"),
    ];
    let stages = [SessionStage::Describe, SessionStage::Highlights, SessionStage::Expansion, SessionStage::Generated];
    let pick = if r.random_bool(0.7) {
        match stage {
            SessionStage::Describe => 0,
            SessionStage::Highlights => r.random_range(1..=11),
            SessionStage::Expansion => *[12, 13, 14, 15, 17].choose(r).unwrap(),
            SessionStage::Generated => *[12, 15, 16, 17, 18].choose(r).unwrap(),
        }
    } else {
        r.random_range(0..20)
    };
    match pick {
        0 => Op::Describe(if r.random_bool(0.8) { descriptions.choose(r).unwrap().clone() } else { "Short.".into() }),
        1..=3 => Op::Pin(r.random_range(0..4)),
        4 => Op::Unpin(r.random_range(0..4)),
        5..=7 => Op::Regenerate(r.random_range(0..4)),
        8..=9 => Op::RegenerateAll,
        10..=11 => Op::Select(r.random_range(0..4)),
        12..=14 => {
            let (path, value) = EDITS.choose(r).unwrap();
            Op::Edit { path: (*path).into(), value: (*value).into() }
        }
        15..=16 => Op::Finalize,
        _ => Op::Back(*stages.choose(r).unwrap()),
    }
}

fn session_state_machine() -> Check {
    let resources = Arc::new(Resources::default());
    let services: Vec<(SessionService, String)> = FIXTURES
        .iter()
        .map(|name| {
            let provider = script(name).varying_provider(Arc::new(HashedNgram::default()));
            (SessionService::new(Gateway::new(Arc::new(provider)), resources.clone()), description(name))
        })
        .collect();
    let descriptions: Vec<String> = services.iter().map(|(_, d)| d.clone()).collect();
    let mut r = rng(10);
    let (mut ops, mut failures, mut regenerations, mut pins_held) = (0usize, 0usize, 0usize, 0usize);
    let mut reached = BTreeSet::new();
    let mut refusals: BTreeMap<String, usize> = BTreeMap::new();
    for seq in 0..10_000 {
        let (service, text) = &services[seq % services.len()];
        let opened = if seq % 10 == 0 { service.open(text) } else { service.create(text) };
        let id = opened.map_err(|e| e.to_string())?.id;
        for step in 0..r.random_range(1..=12) {
            let before = service.get(&id).map_err(|e| e.to_string())?;
            let op = random_op(&mut r, before.stage, &descriptions);
            let result = service.run(&id, op.clone());
            let after = service.get(&id).map_err(|e| e.to_string())?;
            ops += 1;
            let at = || format!("sequence {seq} step {step} {op:?}");
            after.check_invariants().map_err(|e| format!("{}: {e}", at()))?;
            match &result {
                Ok(state) => ensure(*state == after, || format!("{}: returned state differs", at()))?,
                Err(SessionError::Busy(_)) => return Err(format!("{}: busy", at())),
                Err(e) => {
                    failures += 1;
                    *refusals.entry(format!("{e:?}").split(['(', ' ', '{']).next().unwrap().to_owned()).or_insert(0) += 1;
                    ensure(before == after, || format!("{}: failed op changed state", at()))?;
                }
            }
            if result.is_ok() && matches!(op, Op::Regenerate(_) | Op::RegenerateAll) {
                regenerations += 1;
                ensure(before.pinned == after.pinned, || format!("{}: pins changed", at()))?;
                for slot in &before.pinned {
                    pins_held += 1;
                    ensure(before.highlights[*slot] == after.highlights[*slot], || {
                        format!("{}: pinned card {slot} changed", at())
                    })?;
                }
            }
            reached.insert(after.stage);
        }
        service.remove(&id);
    }
    ensure(reached.len() == 4, || format!("only reached {reached:?}"))?;
    Ok(format!(
        "{ops} ops ({failures} refused: {refusals:?}), {regenerations} regenerations kept {pins_held} pinned cards"
    ))
}

fn snapshot_durability() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("sessions.json");
    let provider = script("larry").varying_provider(Arc::new(HashedNgram::default()));
    let service = SessionService::new(Gateway::new(Arc::new(provider)), Arc::new(Resources::default()))
        .with_store(SnapshotStore::new(&path))
        .map_err(|e| e.to_string())?;
    let text = description("larry");
    let id = service.create(&text).map_err(|e| e.to_string())?.id;
    service.snapshot().map_err(|e| e.to_string())?;
    let store = SnapshotStore::new(&path);
    let mut r = rng(11);
    let mut restored = 0;
    for trial in 0..100 {
        if trial % 10 == 0 {
            // move the committed state forward now and then
            service.run(&id, Op::RegenerateAll).map_err(|e| e.to_string())?;
            service.snapshot().map_err(|e| e.to_string())?;
        }
        let prior = std::fs::read(&path).map_err(|e| e.to_string())?;
        let committed = store.load().map_err(|e| e.to_string())?;
        let mut next = Snapshot {
            sessions: committed.sessions.clone(),
            unique_ids: committed.unique_ids.clone(),
        };
        let mut extra = committed.sessions[0].clone();
        extra.id = format!("trial-{trial}");
        next.sessions.push(extra);
        let full = serde_json::to_vec(&next.sessions).unwrap().len() + 64;
        let cut = r.random_range(0..full);
        let interrupted = SnapshotStore::new(&path).with_writer(Arc::new(AtomicFileWriter::interrupted_after(cut)));
        ensure(interrupted.save(&next).is_err(), || format!("trial {trial}: interrupted save reported success"))?;
        let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
        ensure(on_disk == prior, || format!("trial {trial}: store file changed"))?;
        let reloaded = SessionService::new(replay_gateway("larry"), Arc::new(Resources::default()))
            .with_store(SnapshotStore::new(&path))
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let state = reloaded.get(&id).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure(state == service.get(&id).unwrap() && reloaded.len() == 1, || format!("trial {trial}: restored state differs"))?;
        restored += 1;
    }
    Ok(format!("{restored}/100 interrupted writes left the prior store restorable"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("grammar round-trip", grammar_round_trip),
        ("whitelist closure", whitelist_closure),
        ("dialogue-key totality", dialogue_key_totality),
        ("retry budget", retry_budget),
        ("coercion repair", coercion_repair),
        ("gift-matcher oracle", gift_matcher_oracle),
        ("preference disjointness", preference_disjointness),
        ("end-to-end fixtures", end_to_end_fixtures),
        ("emitter determinism", emitter_determinism),
        ("session state machine", session_state_machine),
        ("snapshot durability", snapshot_durability),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
