//! Pinned traces. Set `ANONSIM_BLESS=1` to rewrite the files after an
//! intentional format change.

use std::path::PathBuf;

use anonsim::scenario::Scenario;
use anonsim::trace::{Event, Trace};
use anonsim::types::ProposalValue;

fn golden(name: &str) -> (Scenario, PathBuf) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let text = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
    (Scenario::from_toml(&text).unwrap(), dir.join(format!("{name}.jsonl")))
}

fn pinned(name: &str) -> Trace {
    let (scenario, path) = golden(name);
    let trace = scenario.run().unwrap();
    let text = trace.to_jsonl();
    if std::env::var_os("ANONSIM_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file missing; run with ANONSIM_BLESS=1");
    assert!(text == expected, "{name}: trace differs from {}", path.display());
    assert_eq!(Trace::from_jsonl(&expected).unwrap(), trace);
    trace
}

fn decisions(t: &Trace) -> Vec<(usize, u32, ProposalValue)> {
    t.events
        .iter()
        .filter_map(|e| match e {
            Event::Decide { process, round, value, .. } => Some((*process, *round, *value)),
            _ => None,
        })
        .collect()
}

#[test]
fn es_single_process_decides_its_value_in_round_4() {
    assert_eq!(decisions(&pinned("es_n1")), vec![(0, 4, ProposalValue(5))]);
}

#[test]
fn es_two_processes_agree_on_the_maximum_in_round_6() {
    assert_eq!(decisions(&pinned("es_n2")), vec![(0, 6, ProposalValue(7)), (1, 6, ProposalValue(7))]);
}

#[test]
fn ess_single_process_decides_in_round_4() {
    assert_eq!(decisions(&pinned("ess_n1")), vec![(0, 4, ProposalValue(9))]);
}
