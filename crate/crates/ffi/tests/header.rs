//! The generated header must exist, expose the full surface, and be
//! valid C (checked with the system compiler when one is present).

use std::path::PathBuf;
use std::process::Command;

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("ammore.h")
}

#[test]
fn header_exposes_the_full_surface() {
    let header = std::fs::read_to_string(header_path()).expect("build.rs generates the header");
    for symbol in [
        "typedef struct AmmoreGrader AmmoreGrader;",
        "AmmoreStatus",
        "AmmoreBktParams",
        "ammore_grader_new",
        "ammore_grader_free",
        "ammore_grade_naive",
        "ammore_grade_text",
        "ammore_answers_equivalent",
        "ammore_canonicalize",
        "ammore_string_free",
        "ammore_bkt_default_params",
        "ammore_bkt_step",
        "ammore_bkt_final_score",
    ] {
        assert!(header.contains(symbol), "header missing `{symbol}`");
    }
    // Opaque handle: the struct body must not be exported.
    assert!(!header.contains("struct AmmoreGrader {"));
}

#[test]
fn header_is_valid_c() {
    let compiler = ["cc", "clang", "gcc"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok());
    let Some(compiler) = compiler else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    let status = Command::new(compiler)
        .args(["-std=c99", "-fsyntax-only", "-x", "c"])
        .arg(header_path())
        .status()
        .unwrap();
    assert!(status.success(), "{compiler} rejected the generated header");
}
