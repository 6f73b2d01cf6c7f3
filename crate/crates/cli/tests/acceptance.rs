//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p ccoach --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use ccoach::driver::{self, Session};
use ccoach_core::eval::{cohen_kappa, frequency_table, lights_kappa, ResponseType, RubricRecord};
use ccoach_core::help::{
    build_prompt, check_guardrails, sse_body, stream_completion, GuardrailDecision, GuardrailState, HelpError,
    MockReply, MockTransport, RetryPolicy, StreamEvent, DISCLAIMER,
};
use ccoach_core::telemetry::{aggregate_stats, comment_spans, Anonymizer, EventKind, UsageEvent};
use ccoach_core::{ContextStore, Phase, ToolConfig};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const GOLDEN: &str = include_str!("../../core/tests/golden/runtime_prompt.txt");
const KAPPA_TOLERANCE: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("ccoach.conf");
    let text = format!(
        "state_directory = {}\nlog_directory = {}\n{extra}",
        dir.join("state").display(),
        dir.join("logs").display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn ccoach(config: &Path, cwd: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ccoach"));
    cmd.env("CCOACH_CONFIG", config).current_dir(cwd).stdin(Stdio::null());
    cmd
}

fn prompt_golden() -> Outcome {
    let bundle = build_prompt(&common::listing_context(), 4096).map_err(|e| e.to_string())?;
    let rendered = common::render_bundle(&bundle);
    ensure!(rendered == GOLDEN, "prompt differs from golden file");
    ensure!(rendered.contains("You are a tutor helping a student."), "system line missing");
    ensure!(rendered.contains("Error location: Line 6"), "error location missing");
    Ok(format!("{} bytes identical", rendered.len()))
}

#[derive(Deserialize)]
struct Corpus {
    program: Vec<Planted>,
}

#[derive(Deserialize)]
struct Planted {
    file: String,
    phase: Phase,
    line: u32,
    #[serde(default)]
    tier: Option<String>,
}

fn detect(planted: &Planted, work: &Path) -> Result<(Phase, String, u32), String> {
    let dir = work.join(planted.file.trim_end_matches(".c"));
    fs::create_dir_all(&dir).unwrap();
    fs::copy(corpus_dir().join(&planted.file), dir.join(&planted.file)).unwrap();
    let extra = if planted.tier.as_deref() == Some("memcheck") { "uninit_tier = true\n" } else { "" };
    let config = write_config(&dir, extra);
    let compiled = ccoach(&config, &dir)
        .args([planted.file.as_str(), "-o", "prog"])
        .output()
        .map_err(|e| e.to_string())?;
    if compiled.status.success() {
        Command::new(dir.join("prog"))
            .env("CCOACH_CONFIG", &config)
            .current_dir(&dir)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
    }
    let ctx = ContextStore::for_workspace(&dir)
        .load()
        .map_err(|e| e.to_string())?
        .ok_or("no error recorded")?;
    let file = ctx.error_file().ok_or("no error file")?;
    let name = Path::new(file).file_name().unwrap().to_string_lossy().into_owned();
    Ok((ctx.phase, name, ctx.error_line().ok_or("no error line")?))
}

fn buggy_corpus() -> Outcome {
    let corpus: Corpus = toml::from_str(&fs::read_to_string(corpus_dir().join("corpus.toml")).unwrap()).unwrap();
    let work = tempfile::tempdir().unwrap();
    let mut exact = 0;
    let mut misses = Vec::new();
    for planted in &corpus.program {
        match detect(planted, work.path()) {
            Ok((phase, file, line)) if phase == planted.phase && file == planted.file && line == planted.line => exact += 1,
            Ok(got) => misses.push(format!("{}: got {got:?}", planted.file)),
            Err(e) => misses.push(format!("{}: {e}", planted.file)),
        }
    }
    let total = corpus.program.len();
    ensure!(total >= 10, "corpus has only {total} programs");
    ensure!(exact * 10 >= total * 9, "{exact}/{total} exact; {}", misses.join("; "));
    let mut detail = format!("{exact}/{total} exact");
    if !misses.is_empty() {
        detail.push_str(&format!(" (missed {})", misses.join("; ")));
    }
    Ok(detail)
}

fn wrapper_transparency() -> Outcome {
    let compiler = ToolConfig::default().resolve_compiler().ok_or("no C compiler")?;
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), "");
    let clean = corpus_dir().join("clean");
    let mut names: Vec<PathBuf> = fs::read_dir(&clean).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let args = ["alpha", "two words", ""];
    for source in &names {
        let stem = source.file_stem().unwrap().to_string_lossy().into_owned();
        let plain_bin = work.path().join(format!("{stem}.plain"));
        let wrapped_bin = work.path().join(format!("{stem}.wrapped"));
        let plain_cc = Command::new(&compiler).arg(source).arg("-o").arg(&plain_bin).output().unwrap();
        let wrapped_cc = ccoach(&config, work.path()).arg(source).arg("-o").arg(&wrapped_bin).output().unwrap();
        ensure!(plain_cc.status.code() == wrapped_cc.status.code(), "{stem}: compile status differs");
        ensure!(plain_cc.stdout == wrapped_cc.stdout, "{stem}: compile stdout differs");
        let plain = Command::new(&plain_bin).args(args).stdin(Stdio::null()).output().unwrap();
        let wrapped = Command::new(&wrapped_bin)
            .args(args)
            .env("CCOACH_CONFIG", &config)
            .stdin(Stdio::null())
            .output()
            .unwrap();
        ensure!(plain.status.code() == wrapped.status.code(), "{stem}: exit status {:?} vs {:?}", plain.status, wrapped.status);
        ensure!(plain.stdout == wrapped.stdout, "{stem}: stdout differs");
    }
    Ok(format!("{} clean programs identical", names.len()))
}

/// Pairwise mean of Cohen's kappa from observed and expected agreement in
/// floating point, counting each label directly.
fn oracle_lights(ratings: &BTreeMap<String, BTreeMap<String, u8>>) -> Option<f64> {
    let raters: Vec<&String> = ratings.keys().collect();
    let mut values = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let (a, b) = (&ratings[raters[i]], &ratings[raters[j]]);
            let common: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
            if common.is_empty() {
                continue;
            }
            let n = common.len() as f64;
            let po = common.iter().filter(|k| a[**k] == b[**k]).count() as f64 / n;
            let labels: HashSet<u8> = common.iter().flat_map(|k| [a[*k], b[*k]]).collect();
            let pe: f64 = labels
                .iter()
                .map(|l| {
                    let pa = common.iter().filter(|k| a[**k] == *l).count() as f64 / n;
                    let pb = common.iter().filter(|k| b[**k] == *l).count() as f64 / n;
                    pa * pb
                })
                .sum();
            values.push(if pe == 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) });
        }
    }
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn kappa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20230711);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 200 {
        let raters = rng.gen_range(2..=5);
        let items = rng.gen_range(3..=30);
        let labels = rng.gen_range(2..=4u8);
        let mut ratings: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
        for r in 0..raters {
            let entry = ratings.entry(format!("r{r}")).or_default();
            for i in 0..items {
                if rng.gen_bool(0.8) {
                    entry.insert(format!("p{i}"), rng.gen_range(0..labels));
                }
            }
        }
        let Some(expected) = oracle_lights(&ratings) else {
            ensure!(lights_kappa(&ratings).is_err(), "no overlapping pair, yet a kappa was returned");
            continue;
        };
        let got = lights_kappa(&ratings).map_err(|e| e.to_string())?.kappa;
        let diff = (got - expected).abs();
        if diff.is_nan() || diff > KAPPA_TOLERANCE {
            return Err(format!("set {checked}: {got} vs oracle {expected}"));
        }
        worst = worst.max(diff);
        checked += 1;
    }
    let a = ['Y', 'Y', 'N', 'N'];
    let b = ['Y', 'N', 'N', 'Y'];
    let k = cohen_kappa(&a, &b).map_err(|e| e.to_string())?;
    ensure!(k == 0.0, "A/B case gave {k}");
    Ok(format!("200 sets, max diff {worst:e}; A/B = {k}"))
}

fn record(i: usize, phase: Phase, conceptual: bool) -> RubricRecord {
    RubricRecord {
        pair_id: format!("{}{i}", if phase == Phase::CompileTime { "ct" } else { "rt" }),
        reviewer_id: "reviewer1".into(),
        phase,
        conceptual,
        no_inaccuracy: true,
        correctness: true,
        relevance: true,
        completeness: true,
        code_solution: false,
        response_type: ResponseType::Tutor,
    }
}

fn review_frequency() -> Outcome {
    let mut records: Vec<RubricRecord> = (0..200).map(|i| record(i, Phase::CompileTime, i < 180)).collect();
    records.extend((0..200).map(|i| record(i, Phase::RunTime, i < 150)));
    let report = frequency_table(&records);
    let row = &report.rows[0];
    ensure!(row.ct_yes_pct == Some(90) && row.rt_yes_pct == Some(75), "row is {row:?}");
    let rendered = report.render();
    let line = rendered
        .lines()
        .find(|l| l.starts_with("Conceptually accurate"))
        .ok_or("no conceptual row")?;
    let cells: Vec<&str> = line.split_whitespace().collect();
    ensure!(cells.contains(&"90%") && cells.contains(&"75%"), "rendered row: {line}");
    ensure!(rendered.contains("CT (n=200)") && rendered.contains("RT (n=200)"), "headers: {rendered}");
    Ok(line.split_whitespace().collect::<Vec<_>>().join(" "))
}

const WEEK_TOTALS: [u64; 10] = [1032, 5000, 5500, 6000, 6300, 6700, 7200, 7800, 8887, 9700];
const TOTAL_HELP: u64 = 64119;
const RUNTIME_HELP: u64 = 14253;

fn weekly_usage() -> Outcome {
    let term = NaiveDate::from_ymd_opt(2023, 2, 13).unwrap();
    let start = term.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
    ensure!(WEEK_TOTALS.iter().sum::<u64>() == TOTAL_HELP, "series does not sum");
    let mut runtime: Vec<u64> = WEEK_TOTALS.iter().map(|t| t * RUNTIME_HELP / TOTAL_HELP).collect();
    let short = RUNTIME_HELP - runtime.iter().sum::<u64>();
    *runtime.last_mut().unwrap() += short;
    let mut events = Vec::new();
    for (w, (&total, &rt)) in WEEK_TOTALS.iter().zip(&runtime).enumerate() {
        for i in 0..total {
            let ts = start + w as i64 * 7 * 86400 + (i as i64 * 37) % (7 * 86400);
            let kind = if i < rt { EventKind::HelpRuntime } else { EventKind::HelpCompile };
            let user = format!("{:016x}", i % 500);
            // Round-trip through the log line format.
            let line = UsageEvent::new(ts, kind, user, 100).to_line();
            events.push(UsageEvent::parse_line(line.trim_end()).map_err(|e| e.to_string())?);
            if i % 3 == 0 {
                events.push(UsageEvent::new(ts, EventKind::CompileError, "0".repeat(16), 100));
            }
        }
    }
    let summary = aggregate_stats(&events, term, 0);
    let weeks: Vec<u64> = summary.per_week.values().map(|w| w.total).collect();
    ensure!(weeks == WEEK_TOTALS, "weekly totals {weeks:?}");
    let o = &summary.overall;
    ensure!(
        o.total_help == TOTAL_HELP && o.compile_help == TOTAL_HELP - RUNTIME_HELP && o.runtime_help == RUNTIME_HELP,
        "overall {o:?}"
    );
    let csv = summary.to_csv();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let column = reader.headers().unwrap().iter().position(|h| h == "total").ok_or("no total column")?;
    let totals: Vec<u64> = reader.records().map(|r| r.unwrap()[column].parse().unwrap()).collect();
    ensure!(totals == WEEK_TOTALS, "csv totals {totals:?}");
    ensure!(totals.windows(2).all(|w| w[0] <= w[1]), "csv totals not monotone");

    let night: Vec<UsageEvent> = (0..1000)
        .map(|i| {
            let hour = if i % 2 == 0 { 21 } else { 11 };
            UsageEvent::new(start + (i / 2) * 86400 + hour * 3600, EventKind::HelpCompile, "1".repeat(16), 1)
        })
        .collect();
    let fraction = aggregate_stats(&night, term, 0).overall.night_fraction;
    ensure!(fraction == 0.5, "night fraction {fraction}");
    Ok(format!(
        "weeks {}..{}, total {} = {} + {}, night fraction {fraction:.2}",
        WEEK_TOTALS[0],
        WEEK_TOTALS[9],
        o.total_help,
        o.compile_help,
        o.runtime_help
    ))
}

fn help_session(config: &ToolConfig, now: i64, mock: &MockTransport) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = {
        let mut s = Session {
            config: config.clone(),
            out: &mut out,
            err: &mut err,
            now,
            cwd: config.state_directory.clone(),
        };
        driver::help(&mut s, Some(mock))
    };
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn guardrails() -> Outcome {
    let mut config = ToolConfig {
        rate_limit_window_seconds: 600,
        rate_limit_max_calls: 5,
        ..ToolConfig::default()
    };
    let mut state = GuardrailState::default();
    let warnings = (0..6)
        .filter(|i| matches!(check_guardrails(&mut state, 1000 + i * 100, &config), GuardrailDecision::ProceedWithWarning(_)))
        .count();
    ensure!(warnings == 1, "{warnings} warnings from the guardrail check");

    let dir = tempfile::tempdir().unwrap();
    config.state_directory = dir.path().join("state");
    config.log_directory = dir.path().join("logs");
    let ctx = common::listing_context();
    let base = ctx.timestamp;
    ContextStore::for_user(&config.state_directory).save(&ctx).unwrap();
    let mock = MockTransport::new().fallback(MockReply::from_deltas(&["Look at ", "numbers[0]."]));
    let mut warned = 0;
    for i in 0..6 {
        let (code, out, err) = help_session(&config, base + 10 + i * 100, &mock);
        ensure!(code == 0, "help call {i} exited {code}: {err}");
        ensure!(out.starts_with(DISCLAIMER), "disclaimer not first: {out}");
        warned += usize::from(err.contains("You have asked for AI help"));
    }
    ensure!(warned == 1, "{warned} warnings over 6 help calls");
    ensure!(mock.calls() == 6, "{} requests for 6 calls", mock.calls());

    config.exam_mode = true;
    let exam_mock = MockTransport::new().fallback(MockReply::from_deltas(&["no"]));
    for i in 0..3 {
        let (code, _, err) = help_session(&config, base + 5000 + i, &exam_mock);
        ensure!(code != 0, "exam mode help succeeded");
        ensure!(err.contains("exam mode"), "exam mode message missing: {err}");
    }
    let bundle = build_prompt(&ctx, config.token_budget).unwrap();
    let refused = stream_completion(&bundle, &config, &exam_mock, None, RetryPolicy::default(), &mut |_| {});
    ensure!(matches!(refused, Err(HelpError::ExamMode)), "stream_completion in exam mode: {refused:?}");
    ensure!(exam_mock.calls() == 0, "{} requests in exam mode", exam_mock.calls());
    Ok("1 warning in 6 calls; exam mode made 0 requests".into())
}

fn collect(mock: &MockTransport) -> (Result<String, HelpError>, Vec<String>, String) {
    let config = ToolConfig::default();
    let bundle = build_prompt(&common::listing_context(), config.token_budget).unwrap();
    let mut seen = Vec::new();
    let mut shown = String::new();
    let result = stream_completion(
        &bundle,
        &config,
        mock,
        None,
        RetryPolicy { retries: 0, initial_backoff: Duration::ZERO },
        &mut |event| match event {
            StreamEvent::Disclaimer(d) => seen.push(format!("disclaimer:{d}")),
            StreamEvent::Delta(d) => {
                seen.push("delta".into());
                shown.push_str(d);
            }
        },
    );
    (result, seen, shown)
}

fn streaming() -> Outcome {
    let deltas = ["Th", "e array ", "élément ", "numbers[0] ", "was never set ✓", "🙂 ", "."];
    let expected: String = deltas.concat();
    let body = sse_body(&deltas, true);
    for sizes in [vec![1], vec![2, 3], vec![5, 1, 7], vec![13], vec![64]] {
        let mock = MockTransport::new().fallback(MockReply::Raw {
            body: body.clone(),
            chunk_sizes: sizes.clone(),
        });
        let (result, seen, shown) = collect(&mock);
        let text = result.map_err(|e| format!("chunks {sizes:?}: {e}"))?;
        ensure!(text == expected && shown == expected, "chunks {sizes:?}: got {text:?}");
        ensure!(seen.first().is_some_and(|s| s.starts_with("disclaimer:")), "disclaimer not first");
    }

    let full = sse_body(&deltas, false);
    let keep = sse_body(&deltas[..3], false).len();
    // Cut inside the fourth event.
    let cut = full[..keep + 20].to_vec();
    let mock = MockTransport::new().fallback(MockReply::Raw { body: cut, chunk_sizes: vec![3] });
    let (result, _, shown) = collect(&mock);
    let partial: String = deltas[..3].concat();
    match result {
        Err(HelpError::StreamInterrupted { partial: p }) if p == partial && shown == partial => {}
        other => return Err(format!("early close gave {other:?}")),
    }
    Ok(format!("5 chunkings reassembled; early close kept {} chars", partial.chars().count()))
}

const GIVEN: [&str; 8] = ["Alice", "Bao", "Chidi", "Dana", "Emeka", "Farah", "Goran", "Hana"];
const FAMILY: [&str; 8] = ["Nguyen", "Okafor", "Smith", "Tanaka", "Kowalski", "Haddad", "Petrov", "Silva"];

fn planted_file(rng: &mut ChaCha8Rng, n: usize) -> (String, String, Vec<String>) {
    let given = GIVEN.choose(rng).unwrap();
    let family = FAMILY.choose(rng).unwrap();
    let id = format!("z{}", rng.gen_range(1_000_000..10_000_000));
    let email = format!("{}.{}@student.example.edu", given.to_lowercase(), family.to_lowercase());
    let name_forms = [
        format!("{given} {family}"),
        format!("{}_{}", given.to_lowercase(), family.to_lowercase()),
        format!("{}-{}", given.to_uppercase(), family.to_uppercase()),
    ];
    let header = match n % 3 {
        0 => format!("// Author: {} ({id})\n// Contact: {email}\n", name_forms[0]),
        1 => format!("/*\n * {}\n * id {id}, mail {email}\n */\n", name_forms[2]),
        _ => format!("/* written by {} */ // {id} {email}\n", name_forms[1]),
    };
    let body = format!(
        "#include <stdio.h>\n\nint total_{n}(int count) {{ /* {} says hi */\n    int sum = 0; // {id}\n    for (int i = 0; i < count; i++) {{\n        sum += i * {n};\n    }}\n    printf(\"%d\\n\", sum); /* ask {email} */\n    return sum;\n}}\n",
        name_forms[n % 3],
    );
    let file_name = format!("{}_{id}_lab{}.c", name_forms[1], n % 10);
    let planted = vec![given.to_string(), family.to_string(), id, email];
    (file_name, format!("{header}{body}"), planted)
}

fn outside_comments(text: &str) -> String {
    let mut out = String::new();
    let mut at = 0;
    for span in comment_spans(text) {
        out.push_str(&text[at..span.start]);
        at = span.end;
    }
    out.push_str(&text[at..]);
    out
}

fn anonymizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let known: Vec<String> = GIVEN
        .iter()
        .flat_map(|g| FAMILY.iter().map(move |f| format!("{g} {f}")))
        .collect();
    let scrubber = Anonymizer::new(&ToolConfig::default().student_id_pattern, &known).map_err(|e| e.to_string())?;
    let mut planted_total = 0;
    for n in 0..50 {
        let (file_name, source, planted) = planted_file(&mut rng, n);
        let out = scrubber.anonymize(&source, &file_name);
        let haystack = format!("{}\n{}", out.file_name, out.source).to_lowercase();
        for p in &planted {
            ensure!(!haystack.contains(&p.to_lowercase()), "file {n}: {p:?} survived");
        }
        ensure!(
            outside_comments(&source) == outside_comments(&out.source),
            "file {n}: code outside comments changed"
        );
        planted_total += planted.len();
    }
    Ok(format!("50 files, {planted_total} planted identifiers, none survived"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("prompt golden", prompt_golden, Duration::from_secs(1)),
        ("buggy-program corpus", buggy_corpus, Duration::from_secs(60)),
        ("wrapper transparency", wrapper_transparency, Duration::from_secs(60)),
        ("kappa oracle", kappa_oracle, Duration::from_secs(10)),
        ("review frequency row", review_frequency, Duration::from_secs(10)),
        ("weekly usage series", weekly_usage, Duration::from_secs(10)),
        ("guardrails and exam mode", guardrails, Duration::from_secs(10)),
        ("streaming", streaming, Duration::from_secs(10)),
        ("anonymizer", anonymizer, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => println!("FAIL  {name}: {why} [{elapsed:.2?}]"),
        }
        failed += usize::from(outcome.is_err());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
