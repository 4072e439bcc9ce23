//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use specfault::engine::{localize, ochiai, FormulaId, FormulaRegistry};
use specfault::export::{export_csv, export_json, format_score, LocalizationReport};
use specfault::ingest::{
    parse_canonical, parse_lcov_sections, serialize_canonical, PerTestReport, RawException,
};
use specfault::model::{CoverageMatrix, Location, Outcome, SpectrumCounts, TestId, TestRecord};
use specfault::recovery::FrameGrammar;
use specfault::runner::{default_env_allowlist, run_suite_reports, AdapterConfig, RunConfig};
use specfault::{run, Config};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn json(report: &LocalizationReport) -> String {
    let mut out = Vec::new();
    export_json(report, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn counts(ef: u32, ep: u32, nf: u32, np: u32) -> SpectrumCounts {
    SpectrumCounts::new(ef, ep, nf, np)
}

fn ochiai_oracle_suite() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut worst = 0f64;
    for _ in 0..1000 {
        // Totals (tests per spectrum) stay within 100.
        let total = rng.gen_range(1..=100u32);
        let failing = rng.gen_range(0..=total);
        let ef = rng.gen_range(0..=failing);
        let ep = rng.gen_range(0..=total - failing);
        let (nf, np) = (failing - ef, total - failing - ep);
        let got = ochiai(&counts(ef, ep, nf, np));
        let want = common::ochiai_oracle(ef.into(), ep.into(), nf.into(), np.into());
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || {
            format!("ochiai({ef},{ep},{nf},{np}) = {got}, oracle {want}")
        })?;
    }
    for (ep, nf, np) in [(0, 0, 0), (3, 0, 0), (0, 4, 5), (7, 2, 1)] {
        ensure(ochiai(&counts(0, ep, nf, np)) == 0.0, || format!("ef=0 with ({ep},{nf},{np}) not 0"))?;
    }
    for (ef, np) in [(1, 0), (5, 9), (100, 0)] {
        ensure(ochiai(&counts(ef, 0, 0, np)) == 1.0, || format!("nf=ep=0 with ef={ef} not exactly 1"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 spectra, max error {worst:.1e}, {elapsed:.2?}"))
}

fn localization_oracle_suite() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let registry = FormulaRegistry::default();
    for case in 0..200 {
        let n_tests = rng.gen_range(1..=8usize);
        let n_lines = rng.gen_range(1..=20u32);
        let mut scenario: common::Scenario = (0..n_tests)
            .map(|_| {
                let lines = (1..=n_lines).filter(|_| rng.gen_bool(0.4)).collect();
                (rng.gen_bool(0.4), lines)
            })
            .collect();
        if !scenario.iter().any(|(f, _)| *f) {
            let i = rng.gen_range(0..n_tests);
            scenario[i].0 = true;
        }

        let mut matrix = CoverageMatrix::new();
        let mut records = Vec::new();
        for (i, (failing, lines)) in scenario.iter().enumerate() {
            let test = TestId::new(format!("t{i}")).unwrap();
            matrix.insert(
                test.clone(),
                lines.iter().map(|l| Location::new("m.x", *l).unwrap()).collect(),
            );
            let outcome = if *failing { Outcome::Failed } else { Outcome::Passed };
            records.push(TestRecord::new(test, outcome));
        }
        let got = localize(&matrix, &records, &FormulaId::ochiai(), 0.0, &registry)
            .map_err(|e| format!("case {case}: {e}"))?;
        let want = common::brute_force_rank(&scenario);

        let got_lines: Vec<u32> = got.iter().map(|s| s.location.line).collect();
        let want_lines: Vec<u32> = want.iter().map(|w| w.0).collect();
        ensure(got_lines == want_lines, || {
            format!("case {case}: order {got_lines:?}, oracle {want_lines:?}")
        })?;
        for (g, (line, score, [ef, ep, nf, np])) in got.iter().zip(&want) {
            let c = g.counts;
            ensure([c.ef, c.ep, c.nf, c.np].map(u64::from) == [*ef, *ep, *nf, *np], || {
                format!("case {case}: counts of line {line} differ")
            })?;
            ensure((g.score - score).abs() <= 1e-12, || {
                format!("case {case}: line {line} scored {}, oracle {score}", g.score)
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 matrices, {elapsed:.2?}"))
}

/// Expected top score of the seeded-bug fixture: the faulty line is covered
/// by both failing tests and one of the eight passing ones.
const SEEDED_TOP_SCORE: &str = "0.8164965809";

fn seeded_bug_fixture() -> Check {
    let oracle = common::ochiai_oracle(2, 1, 0, 7);
    ensure(format_score(oracle) == SEEDED_TOP_SCORE, || {
        format!("oracle gives {oracle}, frozen value {SEEDED_TOP_SCORE}")
    })?;

    let start = Instant::now();
    let project = common::project_copy("calc-py");
    let mut cfg = Config::new(project.path());
    cfg.test_timeout = Duration::from_secs(20);
    let report = run(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let t = report.totals;
    ensure((t.tests, t.passing, t.failing) == (10, 8, 2), || format!("totals {t:?}"))?;
    let top = report.ranked.first().ok_or("empty ranking")?;
    ensure(top.location == Location::new("src/calc.py", 6).unwrap(), || {
        format!("top is {}", top.location)
    })?;
    ensure(format_score(top.score) == SEEDED_TOP_SCORE, || {
        format!("top score {}", top.score)
    })?;
    ensure(
        report.ranked.get(1).is_none_or(|s| s.score < top.score),
        || "faulty line shares first place".into(),
    )?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("src/calc.py:6 ranked #1 at {}, {elapsed:.2?}", format_score(top.score)))
}

fn exception_recovery_fixture() -> Check {
    let faulty = Location::new("src/calc.x", 4).unwrap();
    let mut cfg = Config::new(common::fixture("recovery"));
    cfg.coverage_dir = Some(common::fixture("recovery").join("cov"));

    let on = run(&cfg).map_err(|e| e.to_string())?;
    let hit = on.ranked.iter().find(|s| s.location == faulty);
    ensure(hit.is_some_and(|s| s.score > 0.0), || "faulty line missing with recovery on".into())?;

    cfg.recover_exceptions = false;
    let off = run(&cfg).map_err(|e| e.to_string())?;
    ensure(off.ranked.iter().all(|s| s.location != faulty), || {
        "faulty line present with recovery off".into()
    })?;
    Ok(format!(
        "on: {faulty} at {}; off: absent",
        format_score(hit.unwrap().score)
    ))
}

fn find_file(dir: &Path, name: &str) -> Option<std::path::PathBuf> {
    for entry in fs::read_dir(dir).ok()?.flatten() {
        let path = entry.path();
        if path.is_dir() {
            if let Some(found) = find_file(&path, name) {
                return Some(found);
            }
        } else if path.file_name().is_some_and(|n| n == name) {
            return Some(path);
        }
    }
    None
}

fn isolation_and_timeout() -> Check {
    let project = common::project_copy("probe");
    let timeout = Duration::from_millis(1000);
    let adapter = AdapterConfig::load(&project.path().join("specfault-adapter.toml"))
        .map_err(|e| e.to_string())?;
    ensure(
        adapter.env.contains(&format!("PROBE_SLEEP_MS={}", 2 * timeout.as_millis())),
        || "probe must sleep for twice the timeout".into(),
    )?;
    let mut summary = Vec::new();
    for jobs in [1usize, 2] {
        let work = project.path().join(format!("work-{jobs}"));
        let cfg = RunConfig {
            adapter: adapter.clone(),
            timeout,
            parallelism: jobs,
            project_path: project.path().to_path_buf(),
            work_dir: work.clone(),
            grammar: FrameGrammar::default(),
        };
        let start = Instant::now();
        let reports = run_suite_reports(&cfg).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let bound = (timeout + Duration::from_secs(5)) * reports.len().div_ceil(jobs) as u32;
        ensure(elapsed <= bound, || format!("jobs={jobs}: {elapsed:?} exceeds {bound:?}"))?;

        let outcome = |name: &str| {
            reports
                .iter()
                .find(|r| r.record.test.as_str() == name)
                .map(|r| r.record.outcome)
        };
        ensure(outcome("sleep") == Some(Outcome::Timeout), || {
            format!("sleeper outcome {:?}", outcome("sleep"))
        })?;
        ensure(outcome("env") == Some(Outcome::Passed), || format!("env outcome {:?}", outcome("env")))?;

        let dumped = find_file(&work, "env.json").ok_or("probe wrote no env.json")?;
        let seen: BTreeMap<String, String> =
            serde_json::from_str(&fs::read_to_string(dumped).unwrap()).unwrap();
        let mut expected: BTreeMap<String, String> = default_env_allowlist()
            .into_iter()
            .filter_map(|k| std::env::var(&k).ok().map(|v| (k, v)))
            .collect();
        for e in &adapter.env {
            let (k, v) = e.split_once('=').unwrap();
            expected.insert(k.into(), v.into());
        }
        ensure(seen == expected, || {
            let extra: Vec<_> = seen.keys().filter(|k| !expected.contains_key(*k)).collect();
            let missing: Vec<_> = expected.keys().filter(|k| !seen.contains_key(*k)).collect();
            format!("child env differs: extra {extra:?}, missing {missing:?}")
        })?;
        summary.push(format!("jobs={jobs} {elapsed:.2?} <= {bound:?}"));
    }
    Ok(format!("env = adapter env + allowlist; sleeper TIMEOUT; {}", summary.join(", ")))
}

fn parallel_determinism() -> Check {
    let project = common::project_copy("calc-py");
    let mut outputs = Vec::new();
    for jobs in [1usize, 4] {
        let mut cfg = Config::new(project.path());
        cfg.jobs = jobs;
        cfg.test_timeout = Duration::from_secs(20);
        outputs.push(json(&run(&cfg).map_err(|e| e.to_string())?));
    }
    ensure(outputs[0] == outputs[1], || "JSON differs between --jobs 1 and --jobs 4".into())?;
    Ok(format!("{} identical bytes", outputs[0].len()))
}

fn random_report(rng: &mut StdRng, i: usize) -> PerTestReport {
    let outcome = [Outcome::Passed, Outcome::Failed, Outcome::Timeout, Outcome::Crashed]
        [rng.gen_range(0..4)];
    let files = ["src/a.x", "src/b/c.x", "lib/d e.x", "x"];
    let covered: BTreeSet<Location> = (0..rng.gen_range(0..25))
        .map(|_| Location::new(files[rng.gen_range(0..files.len())], rng.gen_range(1..500)).unwrap())
        .collect();
    let mut record = TestRecord::new(
        TestId::new(format!("suite::case_{i} \"quoted\"\t{}", rng.gen::<u16>())).unwrap(),
        outcome,
    );
    record.wall_time_ms = rng.gen_range(0..100_000);
    let mut report = PerTestReport::new(record, covered);
    if outcome.admits_exception() && rng.gen_bool(0.7) {
        let opt = |rng: &mut StdRng, s: &str| rng.gen_bool(0.8).then(|| s.to_string());
        report.raw_trace = Some(RawException {
            type_name: opt(rng, "ValueError"),
            message: opt(rng, "bad value: ünïcode \\ \"x\""),
            trace: opt(rng, "ValueError: bad\n  at f (src/a.x:3)\n  at g (src/b/c.x:10)"),
        });
    }
    report
}

fn format_round_trips() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0007);
    for list in 0..100 {
        let n = rng.gen_range(0..12);
        let reports: Vec<PerTestReport> = (0..n).map(|i| random_report(&mut rng, i)).collect();
        let text = serialize_canonical(&reports);
        let back = parse_canonical(&text).map_err(|e| format!("list {list}: {e}"))?;
        ensure(back == reports, || format!("list {list} did not round-trip"))?;
    }

    let dir = common::fixture("lcov");
    let text = fs::read_to_string(dir.join("cov/coverage.info")).unwrap();
    let expected = common::load_expected(&dir.join("expected.json"));
    let mut got: common::CoverageSets = BTreeMap::new();
    for section in parse_lcov_sections(&text).map_err(|e| e.to_string())? {
        let per_file = got.entry(section.test_name.unwrap_or_default()).or_default();
        for loc in section.covered {
            per_file.entry(loc.file).or_default().push(loc.line);
        }
    }
    got.values_mut()
        .flat_map(|f| f.values_mut())
        .for_each(|l| {
            l.sort();
            l.dedup();
        });
    ensure(got == expected, || format!("LCOV fixture parsed to {got:?}"))?;

    let project = common::project_copy("calc-py");
    let mut cfg = Config::new(project.path());
    cfg.test_timeout = Duration::from_secs(20);
    let report = run(&cfg).map_err(|e| e.to_string())?;
    let mut csv_out = Vec::new();
    export_csv(&report, &mut csv_out).map_err(|e| e.to_string())?;
    let from_csv: Vec<(String, u32, f64)> = csv::Reader::from_reader(csv_out.as_slice())
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    let value: serde_json::Value = serde_json::from_str(&json(&report)).unwrap();
    let from_json: Vec<(String, u32, f64)> = value["suspicious"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            (
                s["file"].as_str().unwrap().to_string(),
                s["line"].as_u64().unwrap() as u32,
                s["score"].as_f64().unwrap(),
            )
        })
        .collect();
    ensure(!from_csv.is_empty() && from_csv == from_json, || {
        "CSV and JSON disagree".into()
    })?;
    Ok(format!("100 lists; LCOV fixture; {} CSV/JSON rows", from_csv.len()))
}

fn offline_online_equivalence() -> Check {
    let project = common::project_copy("calc-py");
    let work = project.path().join("work");
    let mut online = Config::new(project.path());
    online.work_dir = Some(work.clone());
    online.test_timeout = Duration::from_secs(20);
    let a = run(&online).map_err(|e| e.to_string())?;

    let mut offline = Config::new(project.path());
    offline.coverage_dir = Some(work.join("reports"));
    let b = run(&offline).map_err(|e| e.to_string())?;
    ensure(json(&a) == json(&b) && a == b, || "reports differ".into())?;
    Ok(format!(
        "{} ranked lines, {} recovered, identical",
        a.ranked.len(),
        a.recovered_line_count
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("ochiai oracle", ochiai_oracle_suite),
        ("localization oracle", localization_oracle_suite),
        ("seeded-bug fixture", seeded_bug_fixture),
        ("exception recovery", exception_recovery_fixture),
        ("isolation and timeout", isolation_and_timeout),
        ("parallel determinism", parallel_determinism),
        ("format round-trips", format_round_trips),
        ("offline/online equivalence", offline_online_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {}. {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {}. {name}: panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
