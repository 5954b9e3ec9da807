//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use anonsim::checks::{check_trace, Status, ES_DECISION_SLACK};
use anonsim::scenario::{fuzz, FuzzConfig, FuzzRecord, ModeSpec, Scenario};
use anonsim::schedule::EnvKind;
use anonsim::trace::{Algorithm, BackendKind};
use anonsim::types::{Digest, ProposalValue};
use anonsim::weakset::register::{read_rule, RegisterEntry};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Count records whose check `name` ended in `status`.
fn count(recs: &[FuzzRecord], name: &str, status: Status) -> usize {
    recs.iter().filter(|r| r.report.status(name) == Some(status)).count()
}

fn errors(recs: &[FuzzRecord]) -> usize {
    recs.iter().filter(|r| r.error.is_some()).count()
}

fn first_failure(recs: &[FuzzRecord], names: &[&str]) -> String {
    recs.iter()
        .find_map(|r| {
            if let Some(e) = &r.error {
                return Some(format!("seed {}: {e}", r.seed));
            }
            names.iter().find_map(|n| {
                let v = r.report.checks.get(*n)?;
                (v.status == Status::Violation).then(|| format!("seed {} {n}: {}", r.seed, v.witness))
            })
        })
        .unwrap_or_default()
}

fn ms_regime(alg: Algorithm, seed: u64) -> Vec<FuzzRecord> {
    let mut t = Scenario::new(alg, 6, 40, 0);
    t.env = Some(EnvKind::Ms);
    fuzz(&FuzzConfig { mode: ModeSpec::Mixed, ..FuzzConfig::new(t, 10_000, seed) })
}

fn safety(recs: &[FuzzRecord]) -> (usize, usize, usize) {
    (count(recs, "validity", Status::Violation), count(recs, "agreement", Status::Violation), errors(recs))
}

fn criterion_1(recs: &[FuzzRecord]) -> Outcome {
    let (v, a, e) = safety(recs);
    let skewed = recs.iter().filter(|r| r.scenario.mode == ModeSpec::Skewed).count();
    let crashed = recs.iter().filter(|r| r.scenario.crash_count.unwrap_or(0) > 0).count();
    outcome(
        v + a + e == 0 && recs.len() == 10_000,
        format!(
            "{} runs ({skewed} skewed, {crashed} with crashes): {v} validity, {a} agreement violations, {e} errors {}",
            recs.len(),
            first_failure(recs, &["validity", "agreement"])
        ),
    )
}

fn criterion_2(recs: &[FuzzRecord]) -> Outcome {
    let (v, a, e) = safety(recs);
    let bot = count(recs, "bot_free", Status::Violation);
    outcome(
        v + a + e + bot == 0 && recs.len() == 10_000,
        format!(
            "{} runs: {v} validity, {a} agreement, {bot} bottom-decision violations, {e} errors {}",
            recs.len(),
            first_failure(recs, &["validity", "agreement", "bot_free"])
        ),
    )
}

fn criterion_3(recs: &[FuzzRecord]) -> Outcome {
    let ok = count(recs, "termination", Status::Ok);
    let lag = recs
        .iter()
        .filter_map(|r| Some(r.report.last_decision()? as i64 - r.scenario.stabilization? as i64))
        .max()
        .unwrap_or(0);
    let everyone = recs.iter().all(|r| r.report.decisions.len() + r.scenario.crash_count.unwrap_or(0) >= r.scenario.n);
    outcome(
        ok == recs.len() && recs.len() == 1000 && everyone,
        format!(
            "{ok}/{} runs decided by K+{ES_DECISION_SLACK}; latest decision K{lag:+} {}",
            recs.len(),
            first_failure(recs, &["termination"])
        ),
    )
}

fn criterion_4(recs: &[FuzzRecord]) -> Outcome {
    let decided = count(recs, "termination", Status::Ok);
    let windows = recs.len() - count(recs, "leader_stable", Status::Skipped);
    let unstable = count(recs, "leader_stable", Status::Violation);
    let growth = count(recs, "counter_growth", Status::Violation);
    let unreceived = count(recs, "leader_received", Status::Violation);
    outcome(
        decided == recs.len() && recs.len() == 1000 && unstable == 0 && growth == 0,
        format!(
            "{decided}/{} decided; {windows} non-empty windows: {unstable} leader-set changes, {growth} counter-growth \
             violations ({unreceived} windows where a leader missed an out-connected process) {}",
            recs.len(),
            first_failure(recs, &["termination", "leader_stable", "counter_growth"])
        ),
    )
}

fn mutant_trip_rate(alg: Algorithm) -> (usize, usize) {
    let mut t = Scenario::new(alg, 5, 30, 0);
    t.env = Some(EnvKind::Ms);
    t.mutant = true;
    let recs = fuzz(&FuzzConfig::new(t, 300, 99));
    let tripped = recs
        .iter()
        .filter(|r| {
            r.report.status("lemma1") == Some(Status::Violation) || r.report.status("lemma2") == Some(Status::Violation)
        })
        .count();
    (tripped, recs.len())
}

fn criterion_5(batches: &[&[FuzzRecord]]) -> Outcome {
    let all: Vec<&FuzzRecord> = batches.iter().flat_map(|b| b.iter()).collect();
    let bad: Vec<&&FuzzRecord> = all
        .iter()
        .filter(|r| {
            ["lemma1", "lemma2"].iter().any(|n| r.report.status(n) != Some(Status::Ok))
        })
        .collect();
    let (es_trip, es_runs) = mutant_trip_rate(Algorithm::Es);
    let (ess_trip, ess_runs) = mutant_trip_rate(Algorithm::Ess);
    let witness = bad.first().map(|r| format!("seed {}", r.seed)).unwrap_or_default();
    outcome(
        bad.is_empty() && es_trip > 0 && ess_trip > 0,
        format!(
            "lemma checks clean on {}/{} traces {witness}; mutant tripped in {es_trip}/{es_runs} (ES) and {ess_trip}/{ess_runs} (ESS) runs",
            all.len() - bad.len(),
            all.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let recs = fuzz(&FuzzConfig::new(Scenario::new(Algorithm::Weakset, 6, 80, 0), 1000, 6));
    let oracle = count(&recs, "weakset_oracle", Status::Ok);
    let complete = count(&recs, "adds_complete", Status::Ok);
    let lemma = count(&recs, "lemma1", Status::Ok);
    outcome(
        oracle == 1000 && complete == 1000 && lemma == 1000,
        format!(
            "{oracle}/1000 oracle-consistent, {complete}/1000 with every correct add finished, {lemma}/1000 lemma-clean {}",
            first_failure(&recs, &["weakset_oracle", "adds_complete", "lemma1"])
        ),
    )
}

fn entry(value: u64, history_len: usize) -> RegisterEntry {
    let history: BTreeSet<Digest> = (0..history_len as u64).map(|i| Digest::of(&i.to_le_bytes())).collect();
    RegisterEntry { value: ProposalValue(value), history }
}

fn criterion_7() -> Outcome {
    let recs = fuzz(&FuzzConfig::new(Scenario::new(Algorithm::Register, 6, 80, 0), 500, 7));
    let regular = count(&recs, "register_regular", Status::Ok);
    let longer = read_rule(&[entry(5, 2), entry(9, 1)]);
    let tie = read_rule(&[entry(5, 2), entry(9, 2)]);
    let examples = longer == Some(ProposalValue(5)) && tie == Some(ProposalValue(9));
    outcome(
        regular == 500 && examples,
        format!(
            "{regular}/500 regular; read rule gives {longer:?} and {tie:?} on the two examples {}",
            first_failure(&recs, &["register_regular"])
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (backend, seed) in [(BackendKind::Oracle, 80), (BackendKind::Alg4, 81)] {
        let mut t = Scenario::new(Algorithm::Emulation, 6, 20, 0);
        t.backend = Some(backend);
        let recs = fuzz(&FuzzConfig::new(t, 1000, seed));
        let env = count(&recs, "environment", Status::Ok);
        let (v, a, e) = safety(&recs);
        let progress = count(&recs, "progress", Status::Ok);
        pass &= env == 1000 && v + a + e == 0 && progress == 1000;
        lines.push(format!(
            "{backend:?}: {env}/1000 MS-valid, {progress}/1000 reached the horizon, {} safety violations {}",
            v + a + e,
            first_failure(&recs, &["environment", "validity", "agreement", "progress"])
        ));
    }
    outcome(pass, lines.join("; "))
}

fn criterion_9() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let expect: [(&str, Vec<(usize, u32, u64)>); 3] =
        [("es_n1", vec![(0, 4, 5)]), ("es_n2", vec![(0, 6, 7), (1, 6, 7)]), ("ess_n1", vec![(0, 4, 9)])];
    let mut bad = Vec::new();
    for (name, decisions) in expect {
        let s = Scenario::from_toml(&std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap()).unwrap();
        let trace = s.run().unwrap();
        let pinned = std::fs::read_to_string(dir.join(format!("{name}.jsonl"))).unwrap_or_default();
        let got: Vec<(usize, u32, u64)> =
            check_trace(&trace).decisions.iter().map(|(p, d)| (*p, d.round, d.value.0)).collect();
        if trace.to_jsonl() != pinned || got != decisions {
            bad.push(name);
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "3 traces byte-identical".into() } else { format!("differs: {bad:?}") })
}

fn criterion_10() -> Outcome {
    let mut runs = 0;
    let mut diffs = Vec::new();
    for alg in [Algorithm::Es, Algorithm::Ess, Algorithm::Weakset, Algorithm::Register, Algorithm::Emulation] {
        for seed in 0..20u64 {
            let mut s = Scenario::new(alg, 1 + seed as usize % 5, 30, seed * 7919);
            s.crash_count = Some(s.n / 2);
            if seed % 2 == 1 && matches!(alg, Algorithm::Es | Algorithm::Ess) {
                s.mode = ModeSpec::Skewed;
            }
            if alg == Algorithm::Emulation && seed % 2 == 1 {
                s.backend = Some(BackendKind::Alg4);
            }
            runs += 1;
            if s.run().unwrap().to_jsonl() != s.run().unwrap().to_jsonl() {
                diffs.push(format!("{alg} seed {}", s.seed));
            }
        }
    }
    let mut t = Scenario::new(Algorithm::Ess, 5, 40, 0);
    t.env = Some(EnvKind::Ms);
    let cfg = FuzzConfig { mode: ModeSpec::Mixed, ..FuzzConfig::new(t, 200, 10) };
    let a = serde_json::to_string(&fuzz(&cfg)).unwrap();
    let b = serde_json::to_string(&fuzz(&cfg)).unwrap();
    if a != b {
        diffs.push("parallel fuzz batch".into());
    }
    outcome(diffs.is_empty(), format!("{runs} scenario pairs and one 200-run fuzz batch compared; mismatches {diffs:?}"))
}

fn main() -> ExitCode {
    let started = std::time::Instant::now();
    let mut results: BTreeMap<u32, (&str, Outcome)> = BTreeMap::new();

    let alg2_ms = ms_regime(Algorithm::Es, 1);
    results.insert(1, ("ES consensus is safe under MS", criterion_1(&alg2_ms)));
    let alg3_ms = ms_regime(Algorithm::Ess, 2);
    results.insert(2, ("ESS consensus is safe under MS and never decides bottom", criterion_2(&alg3_ms)));

    let es = fuzz(&FuzzConfig::new(Scenario::new(Algorithm::Es, 6, 40, 0), 1000, 3));
    results.insert(3, ("ES consensus decides within K+8 in ES", criterion_3(&es)));
    let ess = fuzz(&FuzzConfig::new(Scenario::new(Algorithm::Ess, 6, 40, 0), 1000, 4));
    results.insert(4, ("ESS termination, leader stability and counter growth", criterion_4(&ess)));

    results.insert(5, ("lemma checkers clean, mutant caught", criterion_5(&[&alg2_ms, &alg3_ms, &es, &ess])));
    results.insert(6, ("weak-set runs satisfy the oracle", criterion_6()));
    results.insert(7, ("register runs are regular", criterion_7()));
    results.insert(8, ("emulated MS is valid and consensus over it is safe", criterion_8()));
    results.insert(9, ("golden traces are pinned", criterion_9()));
    results.insert(10, ("identical seeds give identical traces", criterion_10()));

    let mut failed = 0;
    for (n, (title, o)) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2}: {tag}  {title}: {}", o.detail.trim_end());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed in {:.1?}", results.len() - failed, results.len(), started.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
