//! Golden IR and output files for the corpus, and the malformed-IR fixtures.
//!
//! Set `DP_UPDATE_GOLDEN=1` to rewrite the corpus files after an intended
//! change in lowering, the transform or the printer.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffprog_core::corpus::{self, CorpusEntry};
use diffprog_core::ir::{parse_ir, print_ir, validate};
use diffprog_core::runtime::NullSink;
use diffprog_core::{adjoint_module, compile, Engine, Value};
use serde_json::json;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn updating() -> bool {
    std::env::var_os("DP_UPDATE_GOLDEN").is_some()
}

fn compare(path: &Path, actual: &str) {
    if updating() {
        fs::write(path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with DP_UPDATE_GOLDEN=1 to create it)", path.display()));
    assert!(expected == actual, "{} differs from the regenerated output:\n{actual}", path.display());
}

fn emitted_ir(entry: &CorpusEntry) -> String {
    let module = compile(entry.source).unwrap();
    print_ir(&adjoint_module(&module, None).unwrap())
}

fn outputs(entry: &CorpusEntry) -> String {
    let engine = Engine::from_source(entry.source).unwrap().with_sink(Arc::new(NullSink));
    let args = match entry.references.first() {
        Some(r) => r.args.clone(),
        None => entry.midpoint_args(),
    };
    let scalars = |vs: &[Value]| -> Vec<serde_json::Value> {
        vs.iter()
            .zip(&args)
            .filter(|(_, a)| !matches!(a, Value::Vec(_)))
            .map(|(v, _)| v.to_json())
            .collect()
    };
    let value = engine.run(entry.entry, &args).unwrap();
    let reverse = engine.gradient(entry.entry, &args).unwrap();
    let forward = engine.forward_gradient(entry.entry, &args).unwrap();
    let doc = json!({
        "entry": entry.entry,
        "args": scalars(&args),
        "value": value.to_json(),
        "reverse": scalars(&reverse),
        "forward": scalars(&forward),
    });
    serde_json::to_string_pretty(&doc).unwrap() + "\n"
}

#[test]
fn corpus_ir_matches_golden() {
    for entry in corpus::entries() {
        compare(&golden_dir().join(format!("{}.dpir", entry.name)), &emitted_ir(&entry));
    }
}

#[test]
fn corpus_outputs_match_golden() {
    for entry in corpus::entries() {
        compare(&golden_dir().join(format!("{}.json", entry.name)), &outputs(&entry));
    }
}

#[test]
fn golden_ir_round_trips() {
    for entry in corpus::entries() {
        let path = golden_dir().join(format!("{}.dpir", entry.name));
        let text = fs::read_to_string(&path).unwrap();
        let module = parse_ir(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(validate(&module).is_empty(), "{}", path.display());
        assert_eq!(print_ir(&module), text, "{}", path.display());
    }
}

#[test]
fn regeneration_is_deterministic() {
    for entry in corpus::entries() {
        assert_eq!(emitted_ir(&entry), emitted_ir(&entry));
        assert_eq!(outputs(&entry), outputs(&entry));
    }
}

#[test]
fn malformed_fixtures_are_rejected() {
    let dir = golden_dir().join("malformed");
    let mut seen = 0;
    for name in ["double_assignment", "if_yield_arity", "unknown_callee"] {
        let text = fs::read_to_string(dir.join(format!("{name}.dpir"))).unwrap();
        let expected = fs::read_to_string(dir.join(format!("{name}.expected"))).unwrap();
        let module = parse_ir(&text).unwrap();
        let diags: Vec<String> = validate(&module).iter().map(|d| d.to_string()).collect();
        assert_eq!(diags, expected.lines().collect::<Vec<_>>(), "{name}");
        seen += 1;
    }
    assert_eq!(seen, 3);
}
