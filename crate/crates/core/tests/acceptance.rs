//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Tolerances and instance counts are fixed here and must not be relaxed.

mod oracles;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use forge_core::analysis::diversity_gain;
use forge_core::batch::{run_generation_batch, run_refine_batch, GenerationConfig};
use forge_core::dialogue::{
    advance_turn, inject_guidance, open_session, AgentBindings, Clock, GuidancePrompt, SessionConfig,
};
use forge_core::events::{reconstruct, EventLog};
use forge_core::gateway::mock::{
    mock_chat_binding, mock_embedding_binding, synthetic_gateway, SyntheticChat, MOCK_CHAT,
};
use forge_core::gateway::{BackendFailure, ChatBackend, RetryPolicy};
use forge_core::modbench::{self, build_prompt, ModerationDataset, ModerationItem, Prediction, Task};
use forge_core::refinement::kmeans::{kmeans, KMeansConfig};
use forge_core::refinement::{RefineBindings, RefineConfig, Stages};
use forge_core::registry::{CultureRegistry, Gender, SeedDatum, SeedSource};
use forge_core::util::stable_hash;
use forge_core::vsm::{calibrate_constants, cultural_distance, score_dimensions, DimensionValues, VsmConstants, VsmMeans};
use forge_core::{BackendBinding, ChatMessage, EmbeddingVector, Mode, SessionStatus, TurnKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VSM_TOLERANCE: f64 = 1e-9;
const VSM_CASES: usize = 25;
const KMEANS_INSTANCES: usize = 200;
const F1_DATASETS: usize = 50;

type Outcome = Result<String, String>;
/// Name, check, and time budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn seeds() -> Vec<SeedDatum> {
    let cultures = ["ar", "bn", "zh", "de", "ko"];
    let answers = ["Strongly agree", "Agree", "Disagree", "Not important", "Very important"];
    (0..5)
        .map(|i| SeedDatum {
            seed_id: format!("wvs-{:03}", i + 1),
            question: format!("How important is {} in your life?", ["family", "work", "religion", "leisure", "politics"][i]),
            target_culture: cultures[i].into(),
            attested_answer: answers[i].into(),
            source: SeedSource::Wvs,
        })
        .collect()
}

fn refine_bindings() -> RefineBindings {
    RefineBindings {
        extraction: mock_chat_binding(),
        verification: mock_chat_binding().with_temperature(0.0),
        embedding: mock_embedding_binding(),
    }
}

fn vsm_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let to_array = |v: DimensionValues| [v.pdi, v.idv, v.mas, v.uai, v.lto, v.ivr];
    for case in 0..VSM_CASES {
        let mut m = [0.0; 24];
        for slot in m.iter_mut() {
            *slot = rng.random_range(1.0..=5.0);
        }
        let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-200.0..200.0));
        let constants = VsmConstants { pdi: c[0], idv: c[1], mas: c[2], uai: c[3], lto: c[4], ivr: c[5] };
        let got = to_array(score_dimensions(&VsmMeans { values: m }, &constants));
        let want = oracles::vsm_by_hand(&m, c);
        for d in 0..6 {
            ensure((got[d] - want[d]).abs() <= VSM_TOLERANCE, || {
                format!("case {case} dim {d}: got {} want {}", got[d], want[d])
            })?;
        }
    }
    let mut m = [3.0; 24];
    m[6] = 4.0;
    m[1] = 2.0;
    m[19] = 5.0;
    m[22] = 1.0;
    let means = VsmMeans { values: m };
    let raw = score_dimensions(&means, &VsmConstants::default());
    ensure((raw.pdi - 170.0).abs() <= VSM_TOLERANCE, || format!("PDI raw {} != 170", raw.pdi))?;
    let anchored = score_dimensions(&means, &VsmConstants { pdi: -70.0, ..Default::default() });
    ensure((anchored.pdi - 100.0).abs() <= VSM_TOLERANCE, || format!("PDI anchored {} != 100", anchored.pdi))?;
    let reference = DimensionValues { pdi: 100.0, ..raw };
    ensure(calibrate_constants(&raw, &reference).pdi == -70.0, || "calibrated C_PDI != -70".into())?;

    let base = DimensionValues { pdi: 10.0, idv: 20.0, mas: 30.0, uai: 40.0, lto: 50.0, ivr: 60.0 };
    ensure(cultural_distance(&base, &base) == 0.0, || "identity distance not 0".into())?;
    let shifted = DimensionValues { pdi: 13.0, idv: 24.0, ..base };
    ensure(cultural_distance(&shifted, &base) == 5.0, || "3-4-5 distance not 5".into())?;
    let ones = DimensionValues::from_fn(|d| base.get(d) + 1.0);
    ensure(cultural_distance(&ones, &base) == 6f64.sqrt(), || "unit shift distance not sqrt 6".into())?;
    ensure(cultural_distance(&base, &shifted) == cultural_distance(&shifted, &base), || "asymmetric".into())?;
    Ok(format!("{VSM_CASES} random cases within {VSM_TOLERANCE:e}, 170/-70->100, distances 0/5/sqrt6"))
}

fn fan_out() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (transcripts, refined) = (dir.path().join("transcripts"), dir.path().join("refined"));
    let gw = synthetic_gateway().build();
    let registry = CultureRegistry::bundled();
    let generation = GenerationConfig { max_turns: 6, ..Default::default() };
    let job = run_generation_batch(&seeds(), &registry, &gw, &AgentBindings::same(mock_chat_binding()), &generation, &transcripts)
        .map_err(|e| e.to_string())?;
    ensure(job.is_done(), || format!("generation job {:?}", job.status))?;
    let config = RefineConfig { target_count: 10, ..Default::default() };
    let (job, manifest) = run_refine_batch(&transcripts, &registry, &gw, &refine_bindings(), &config, None, &refined)
        .map_err(|e| e.to_string())?;
    ensure(job.is_done(), || format!("refine job {:?}", job.status))?;
    ensure(manifest.total_seeds == 5, || format!("{} seeds", manifest.total_seeds))?;
    ensure(manifest.total_samples == 50, || format!("{} samples, want 50", manifest.total_samples))?;
    for (culture, tally) in &manifest.cultures {
        ensure(tally.ratio == 10.0, || format!("{culture}: ratio {}", tally.ratio))?;
    }
    let on_disk: usize = manifest
        .samples_files
        .values()
        .map(|p| std::fs::read_to_string(p).map(|t| t.lines().count()).unwrap_or(0))
        .sum();
    ensure(on_disk == 50, || format!("{on_disk} sample lines on disk"))?;
    Ok(format!("5 seeds -> {} samples across {} cultures, ratio 10:1", manifest.total_samples, manifest.cultures.len()))
}

fn kmeans_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let config = KMeansConfig::default();
    let mut with_duplicates = 0;
    for instance in 0..KMEANS_INSTANCES {
        let k = rng.random_range(2..=3);
        let n = rng.random_range(k + 1..=8);
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            if i >= 1 && rng.random_bool(0.25) {
                let j = rng.random_range(0..i);
                points.push(points[j].clone());
            } else {
                points.push(vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]);
            }
        }
        let distinct_count = |pts: &[Vec<f64>]| {
            let mut d = pts.to_vec();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.dedup();
            d.len()
        };
        // Too few distinct points for k: overwrite trailing copies with fresh ones.
        let mut slot = points.len();
        while distinct_count(&points) < k {
            slot -= 1;
            points[slot] = vec![rng.random_range(10.0..20.0), rng.random_range(10.0..20.0)];
        }
        if distinct_count(&points) < points.len() {
            with_duplicates += 1;
        }
        let got = kmeans(&points, k, &config).map_err(|e| format!("instance {instance}: {e}"))?;
        let optimum = oracles::brute_force_kmeans(&points, k);
        let tol = 1e-9 * (1.0 + optimum.sse);
        ensure(got.sse <= optimum.sse + tol, || {
            format!("instance {instance}: sse {} > optimal {} ({points:?}, k={k})", got.sse, optimum.sse)
        })?;
        let mut reps = got.representatives.clone();
        reps.sort_unstable();
        ensure(optimum.representative_sets.contains(&reps), || {
            format!("instance {instance}: representatives {reps:?} not among {:?}", optimum.representative_sets)
        })?;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if points[i] == points[j] {
                    ensure(got.assignments[i] == got.assignments[j], || {
                        format!("instance {instance}: duplicates {i},{j} split")
                    })?;
                }
            }
        }
    }
    Ok(format!("{KMEANS_INSTANCES} instances optimal ({with_duplicates} with exact duplicates)"))
}

fn f1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut class_counts_seen = std::collections::BTreeSet::new();
    for ds in 0..F1_DATASETS {
        let classes_wanted = 2 + ds % 6;
        class_counts_seen.insert(classes_wanted);
        let (task, classes): (Task, Vec<&str>) = match classes_wanted {
            2 => (Task::Offensive, Task::Offensive.labels().to_vec()),
            3 => (Task::HateOffens, Task::HateOffens.labels().to_vec()),
            5 => (Task::OffensiveFinegrained, Task::OffensiveFinegrained.labels().to_vec()),
            c => (Task::HateFinegrained, Task::HateFinegrained.labels()[..c].to_vec()),
        };
        let n = rng.random_range(1..=1000);
        let skill = rng.random_range(0.0..1.0);
        let mut gold = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        for _ in 0..n {
            let g = rng.random_range(0..classes.len());
            gold.push(g);
            let roll: f64 = rng.random();
            pred.push(if roll < 0.05 {
                None
            } else if roll < 0.05 + skill * 0.95 {
                Some(g)
            } else {
                Some(rng.random_range(0..classes.len()))
            });
        }
        let dataset = ModerationDataset {
            dataset_id: format!("synthetic-{ds}"),
            culture: "ar".into(),
            task,
            items: gold
                .iter()
                .enumerate()
                .map(|(i, &g)| ModerationItem { text: format!("item {i}"), gold: classes[g].to_string() })
                .collect(),
        };
        let predictions: Vec<Prediction> = pred
            .iter()
            .map(|p| match p {
                Some(i) => modbench::parse_label(task, classes[*i]),
                None => modbench::parse_label(task, "I cannot decide."),
            })
            .collect();
        let report = modbench::score_predictions(&dataset, &predictions, modbench::Averaging::Macro);
        let want = oracles::macro_f1_by_matrix(&classes, &gold, &pred);
        ensure(report.macro_f1 == want, || format!("dataset {ds}: harness {} oracle {want}", report.macro_f1))?;
    }
    Ok(format!("{F1_DATASETS} datasets, class counts {class_counts_seen:?}, exact equality"))
}

fn prompt_fidelity() -> Outcome {
    let fixture = include_str!("fixtures/moderation_prompts.tsv");
    let mut covered = std::collections::BTreeSet::new();
    let text = "Sample item text.";
    for line in fixture.lines().filter(|l| !l.trim().is_empty()) {
        let (name, instruction) = line.split_once('\t').ok_or_else(|| format!("bad fixture line: {line}"))?;
        let task: Task = name.parse().map_err(|e| format!("{name}: {e}"))?;
        let messages = build_prompt(task, "Arabic", text).map_err(|e| e.to_string())?;
        ensure(messages[0].content == "You are an Arabic chatbot that know Arabic very well.", || {
            format!("system prompt {:?}", messages[0].content)
        })?;
        let expected = format!("{instruction}\n{text}");
        ensure(messages[1].content == expected, || format!("{name}: {:?} != {expected:?}", messages[1].content))?;
        covered.insert(task);
    }
    ensure(covered.len() == 20 && Task::ALL.iter().all(|t| covered.contains(t)), || {
        format!("fixture covers {} of 20 tasks", covered.len())
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gw = synthetic_gateway().build();
    let registry = CultureRegistry::bundled();
    let seeds = seeds();
    run_generation_batch(&seeds, &registry, &gw, &AgentBindings::same(mock_chat_binding()), &GenerationConfig::default(), dir.path())
        .map_err(|e| e.to_string())?;
    let sessions = forge_core::batch::load_transcripts(dir.path()).map_err(|e| e.to_string())?;
    let by_session: BTreeMap<String, (String, String)> = sessions
        .iter()
        .map(|s| (s.session_id.clone(), (s.delegate.name.clone(), s.seed.attested_answer.clone())))
        .collect();
    let mut checked = 0;
    for record in gw.call_log().records() {
        let (Some(session), Some(speaker)) = (&record.tag.session_id, &record.tag.speaker) else { continue };
        let Some((delegate, answer)) = by_session.get(session) else { continue };
        if speaker != delegate {
            continue;
        }
        let Some(messages) = &record.messages else { continue };
        let system = messages.first().map(|m| m.content.as_str()).unwrap_or("");
        ensure(system.contains(answer.as_str()), || format!("{session}: delegate prompt lacks {answer:?}"))?;
        checked += 1;
    }
    ensure(checked >= seeds.len(), || format!("only {checked} delegate calls logged"))?;
    Ok(format!("20/20 task prompts byte-identical; attested answer in {checked} delegate prompts"))
}

/// Rejects roughly a quarter of verification questions so the ablation arms differ.
struct PickyJudge(SyntheticChat);

impl ChatBackend for PickyJudge {
    fn complete(&self, binding: &BackendBinding, history: &[ChatMessage]) -> Result<String, BackendFailure> {
        let last = history.last().map(|m| m.content.as_str()).unwrap_or("");
        if last.contains(forge_core::analysis::YES_NO_SUFFIX) && stable_hash(last).is_multiple_of(4) {
            return Ok("No".into());
        }
        self.0.complete(binding, history)
    }
}

fn steering_contract() -> Outcome {
    let gw = synthetic_gateway().build();
    let registry = CultureRegistry::bundled();
    let bindings = AgentBindings::same(mock_chat_binding());
    let seed = seeds().remove(0);
    let (contact, delegate) =
        registry.resolve_personas(&seed.target_culture, Gender::Female, Gender::Male).map_err(|e| e.to_string())?;
    let config = SessionConfig::default().with_mode(Mode::Interactive).with_max_turns(6).with_clock(Clock::Logical);
    let mut session =
        open_session("steer-1", seed, contact, delegate, &registry, config).map_err(|e| e.to_string())?;
    let mut log = EventLog::new("steer-1");
    log.sync(&session);
    ensure(log.events().first().is_some_and(|e| e.sequence == 1), || "first event is not sequence 1".into())?;

    let guidance = ["Do you agree with him? Provide more reasons to support your idea?", "Are there anything in your culture related to the problem talked before?"];
    let mut injections = 0;
    for step in 0..6 {
        if step % 2 == 1 {
            let text = guidance[injections % guidance.len()];
            let turn = inject_guidance(&mut session, GuidancePrompt::human(text)).map_err(|e| e.to_string())?;
            log.sync(&session);
            injections += 1;
            let p = turn.index;
            advance_turn(&mut session, &gw, &bindings).map_err(|e| e.to_string())?;
            log.sync(&session);
            let next = session.turns.get(p + 1).ok_or("no statement after guidance")?;
            ensure(next.kind == TurnKind::Statement, || format!("turn {} is {:?}", p + 1, next.kind))?;
            let record = gw.call_log().records().into_iter().rfind(|r| r.messages.is_some()).ok_or("no call")?;
            let outbound = record.messages.unwrap();
            let last = outbound.last().ok_or("empty prompt")?;
            ensure(last.content.contains(text), || format!("statement {} prompt lacks guidance {p}", p + 1))?;
        } else {
            advance_turn(&mut session, &gw, &bindings).map_err(|e| e.to_string())?;
            log.sync(&session);
        }
        if !session.is_open() {
            break;
        }
    }
    ensure(session.status == SessionStatus::Completed, || format!("status {:?}", session.status))?;
    let seqs: Vec<u64> = log.events().iter().map(|e| e.sequence).collect();
    ensure(seqs == (1..=seqs.len() as u64).collect::<Vec<_>>(), || format!("gaps in {seqs:?}"))?;
    let (turns, status, _) = reconstruct(log.events())?;
    ensure(turns == session.turns && status == Some(session.status), || "replay differs from session".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let transcripts = dir.path().join("t");
    let picky = forge_core::gateway::Gateway::builder()
        .chat_backend(MOCK_CHAT, Arc::new(PickyJudge(SyntheticChat::default())))
        .embedding_backend(forge_core::gateway::mock::MOCK_EMBEDDING, Arc::new(forge_core::gateway::mock::HashEmbedder::default()))
        .retry(RetryPolicy::immediate(3))
        .build();
    run_generation_batch(&seeds(), &registry, &picky, &bindings, &GenerationConfig { max_turns: 6, ..Default::default() }, &transcripts)
        .map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for (i, stages) in [Stages::GENERATE, Stages::GENERATE_VERIFY, Stages::FULL].into_iter().enumerate() {
        let config = RefineConfig { target_count: 10, stages, ..Default::default() };
        let (_, manifest) =
            run_refine_batch(&transcripts, &registry, &picky, &refine_bindings(), &config, None, &dir.path().join(format!("arm{i}")))
                .map_err(|e| e.to_string())?;
        sizes.push((stages.label(), manifest.total_samples));
    }
    ensure(sizes[0].1 >= sizes[1].1 && sizes[1].1 >= sizes[2].1, || format!("not monotone: {sizes:?}"))?;
    Ok(format!("{injections} injections honoured, {} gapless events replayed, arms {sizes:?}", seqs.len()))
}

fn diversity_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let vectors: Vec<Vec<f64>> = (0..6).map(|_| oracles::random_unit(&mut rng, 4)).collect();
    let emb: Vec<EmbeddingVector> = vectors.iter().map(|v| EmbeddingVector::new(v.clone())).collect();
    let subset = |mask: u32| -> Vec<usize> { (0..6).filter(|i| mask & (1 << i) != 0).collect() };
    let gain = |mask: u32, x: usize| -> Result<f64, String> {
        let set: Vec<EmbeddingVector> = subset(mask).into_iter().map(|i| emb[i].clone()).collect();
        diversity_gain(&set, &emb[x]).map_err(|e| e.to_string())
    };
    let mut pairs = 0;
    for b in 0u32..64 {
        for x in 0..6 {
            let g_b = gain(b, x)?;
            if b & (1 << x) != 0 {
                ensure(g_b == 0.0, || format!("duplicate gain {g_b} for {x} in {:?}", subset(b)))?;
                continue;
            }
            let set: Vec<Vec<f64>> = subset(b).into_iter().map(|i| vectors[i].clone()).collect();
            let want = oracles::facility_gain(&set, &vectors[x]);
            ensure((g_b - want).abs() <= 1e-12, || format!("gain {g_b} vs oracle {want}"))?;
            ensure(g_b >= 0.0, || "negative gain".into())?;
            // Every subset A of B.
            let mut a = b;
            loop {
                let g_a = gain(a, x)?;
                ensure(g_a >= g_b, || format!("submodularity: gain({:?})={g_a} < gain({:?})={g_b}", subset(a), subset(b)))?;
                pairs += 1;
                if a == 0 {
                    break;
                }
                a = (a - 1) & b;
            }
        }
    }
    Ok(format!("{pairs} (A subset B, x) triples checked on 6 unit vectors"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("vsm_exactness", vsm_exactness, Duration::from_secs(1)),
        ("fan_out_reproduction", fan_out, Duration::from_secs(10)),
        ("kmeans_oracle", kmeans_oracle, Duration::from_secs(30)),
        ("f1_oracle", f1_oracle, Duration::from_secs(10)),
        ("prompt_fidelity", prompt_fidelity, Duration::from_secs(30)),
        ("steering_contract", steering_contract, Duration::from_secs(30)),
        ("diversity_properties", diversity_properties, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name:<22} {detail} [{} ms]", elapsed.as_millis()),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name:<22} {reason} [{} ms]", elapsed.as_millis());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
