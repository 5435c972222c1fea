//! Command-line surface tests: report content, stepwise mode, certificate
//! verification through files, and exit codes.

use std::io::Write;
use std::process::{Command, Stdio};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_movecalc")
}

#[test]
fn info_reports_invariant_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loops.json");
    // One vertex with two loops: trivial K0, but the rich-component size
    // bound fails.
    std::fs::write(&path, "{\"adjacency\":[[2]],\"vertices\":[\"v\"]}\n").unwrap();
    let out = Command::new(bin())
        .args(["--machine", "info"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["canonical"], serde_json::json!(false));
    assert_eq!(v["pointed_k0"], serde_json::json!("0, class ()"));
    assert!(v["witnesses"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w.as_str().unwrap().contains("regular vertices")));
}

#[test]
fn check_canonical_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loop.json");
    std::fs::write(&path, "{\"adjacency\":[[1]],\"vertices\":[\"v\"]}\n").unwrap();
    let out = Command::new(bin())
        .args(["--machine", "check-canonical"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["canonical"], serde_json::json!(true));
    assert_eq!(v["trichotomy"][0], serde_json::json!("LoneRegularLoop"));
}

#[test]
fn from_db_materializes_source_first() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.json");
    std::fs::write(&path, "{\"b\":[[-1]],\"d\":[2]}\n").unwrap();
    let out = Command::new(bin())
        .args(["from-db"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        out.stdout,
        b"{\"adjacency\":[[0,1],[0,0]],\"vertices\":[\"s\",\"v1\"]}\n"
    );
}

#[test]
fn verify_cert_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    std::fs::write(&g, "{\"adjacency\":[[1]],\"vertices\":[\"v\"]}\n").unwrap();
    let cert = dir.path().join("cert.json");
    std::fs::write(&cert, "{\"U\":[[1]],\"V\":[[1]],\"level\":\"SL+\"}\n").unwrap();
    let out = Command::new(bin())
        .args(["--machine", "verify-cert"])
        .arg(&g)
        .arg(&g)
        .arg(&cert)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["claim_ok"], serde_json::json!(true));
    assert_eq!(v["achieved"], serde_json::json!("SL+"));

    // A determinant-2 certificate is rejected with exit code 1.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"U\":[[2]],\"V\":[[1]],\"level\":\"GL\"}\n").unwrap();
    let out = Command::new(bin())
        .args(["verify-cert"])
        .arg(&g)
        .arg(&g)
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn canonicalize_replays_on_sourced_graph() {
    // A graph that already carries its collected source first.
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    std::fs::write(&g, "{\"adjacency\":[[0,3],[0,2]],\"vertices\":[\"s\",\"v\"]}\n").unwrap();
    let s = dir.path().join("s.jsonl");
    let out = Command::new(bin())
        .args(["canonicalize"])
        .arg(&g)
        .arg("--emit-script")
        .arg(&s)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let replay = Command::new(bin()).args(["apply"]).arg(&g).arg(&s).output().unwrap();
    assert_eq!(out.stdout, replay.stdout);

    // A graph listing its source last is refused for certified transforms.
    let g2 = dir.path().join("g2.json");
    std::fs::write(&g2, "{\"adjacency\":[[2,0],[3,0]],\"vertices\":[\"v\",\"s\"]}\n").unwrap();
    let out = Command::new(bin())
        .args(["canonicalize"])
        .arg(&g2)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn repl_applies_moves_and_refuses_bad_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(&path, "{\"adjacency\":[[2]],\"vertices\":[\"v\"]}\n").unwrap();
    let mut child = Command::new(bin())
        .args(["repl"])
        .arg(&path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        // A loop vertex cannot be reduced; then a legal outsplit; then quit.
        writeln!(stdin, "{{\"move\":\"Rplus\",\"vertex\":0}}").unwrap();
        writeln!(stdin, "{{\"move\":\"O\",\"vertex\":0,\"parts\":[[1],[1]]}}").unwrap();
        writeln!(stdin, "quit").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("refused"), "missing refusal: {text}");
    assert!(text.contains("supports a loop"), "missing reason: {text}");
    // After the outsplit the pair is B = [[0,1],[1,0]].
    assert!(text.contains("\"adjacency\":[[1,1],[1,1]]"), "{text}");
    assert!(text.contains("pointed K0"), "{text}");
}
