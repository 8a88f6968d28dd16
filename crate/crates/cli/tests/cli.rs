//! Runs the `personaflow` binary against temporary data directories.

#[path = "support/seed.rs"]
mod seed;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use personaflow_core::fixture::bundled_dir;
use personaflow_core::model::AnalyticsSummary;
use personaflow_core::service::{IssueDetail, PersonaView};
use tempfile::TempDir;

const SHEETABLE: &str = "https://github.com/SheetAble/SheetAble";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_personaflow"));
    cmd.env_remove("PERSONAFLOW_API")
        .env_remove("PERSONAFLOW_DATA_DIR")
        .env_remove("PERSONAFLOW_FIXTURES");
    cmd
}

fn local(dir: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--local")
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn copy_tree(from: &Path, to: &Path, skip: &str) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        if name == skip {
            continue;
        }
        let target = to.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target, skip);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[test]
fn offline_analyze_prints_four_personas() {
    let dir = TempDir::new().unwrap();
    let out = ok(&local(
        dir.path(),
        &["analyze", SHEETABLE, "--personas", "4", "--json"],
    ));
    let personas: Vec<PersonaView> = serde_json::from_str(&out).unwrap();
    assert_eq!(personas.len(), 4);

    let table = ok(&local(dir.path(), &["personas", "list"]));
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.starts_with("ID"));
}

#[test]
fn analyze_with_save_maps_the_issue_batch() {
    let dir = TempDir::new().unwrap();
    let out = local(dir.path(), &["analyze", SHEETABLE, "--save"]);
    ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mapped 20 of 20 issues"), "{stderr}");

    let listing = ok(&local(dir.path(), &["issues", "list", "--view", "persona"]));
    assert!(
        listing.contains("== Akira Nakamura (9 issues)"),
        "{listing}"
    );
    assert!(!listing.contains("Unassigned"));
}

#[test]
fn invalid_persona_count_exits_with_a_usage_code() {
    let dir = TempDir::new().unwrap();
    let out = local(dir.path(), &["analyze", SHEETABLE, "--personas", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn provider_failure_exits_with_code_four() {
    let dir = TempDir::new().unwrap();
    let fixtures = dir.path().join("fixtures");
    copy_tree(
        &bundled_dir().join("sheetable"),
        &fixtures.join("sheetable"),
        "llm",
    );
    let out = bin()
        .arg("--local")
        .arg("--data-dir")
        .arg(dir.path().join("data"))
        .arg("--fixtures")
        .arg(&fixtures)
        .args(["analyze", SHEETABLE])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unreachable_api_exits_with_code_three() {
    let out = bin()
        .args(["--api", "http://127.0.0.1:1", "repos"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_repository_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    seed::seed(dir.path());
    let out = local(dir.path(), &["analytics", "--repo", "nobody/nothing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn markdown_export_keeps_the_card_order() {
    let dir = TempDir::new().unwrap();
    ok(&local(dir.path(), &["analyze", SHEETABLE]));
    let md = ok(&local(dir.path(), &["personas", "export"]));
    assert!(md.starts_with("# Personas for sheetable~sheetable"), "{md}");
    assert_eq!(md.matches("\n## ").count(), 4);
    let card = md.split("\n## ").nth(1).unwrap();
    let order = [
        "![",
        "- **Age:**",
        "> ",
        "### Background",
        "### Goals and motivations",
        "### Pain points and frustrations",
    ];
    let positions: Vec<usize> = order
        .iter()
        .map(|m| card.find(m).unwrap_or_else(|| panic!("missing {m}")))
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
}

#[test]
fn analytics_on_a_seeded_store() {
    let dir = TempDir::new().unwrap();
    let seeded = seed::seed(dir.path());
    let out = ok(&local(dir.path(), &["analytics", "--json"]));
    let a: AnalyticsSummary = serde_json::from_str(&out).unwrap();
    assert_eq!(a.total_issues, 10);
    assert_eq!(a.active_personas, 5);
    assert_eq!(a.coverage_rate, 1.0);
    assert_eq!(a.label_distribution["bug"], 5);

    let first = seeded.personas[0].to_string();
    let detail: IssueDetail = serde_json::from_str(&ok(&local(
        dir.path(),
        &["issues", "associate", "1", "--remove", &first, "--json"],
    )))
    .unwrap();
    assert!(detail.associations.is_empty());
    let a: AnalyticsSummary =
        serde_json::from_str(&ok(&local(dir.path(), &["analytics", "--json"]))).unwrap();
    assert_eq!(a.coverage_rate, 0.9);

    let text = ok(&local(dir.path(), &["analytics"]));
    assert!(text.contains("Coverage rate"), "{text}");
    assert!(text.contains("90.0%"), "{text}");
}

#[test]
fn stale_version_on_associate_is_rejected() {
    let dir = TempDir::new().unwrap();
    let seeded = seed::seed(dir.path());
    let second = seeded.personas[1].to_string();
    let out = local(
        dir.path(),
        &[
            "issues",
            "associate",
            "1",
            "--add",
            &second,
            "--version",
            "999",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn wait_for_port(port: u16) {
    for _ in 0..200 {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return;
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
    panic!("server on port {port} never came up");
}

#[test]
fn remote_mode_talks_to_a_served_engine() {
    let dir = TempDir::new().unwrap();
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = bin()
        .arg("--data-dir")
        .arg(dir.path())
        .args(["serve", "--addr", &addr])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    std::thread::spawn(move || for _ in BufReader::new(stderr).lines() {});
    let _server = Server(child);
    wait_for_port(port);

    let api = format!("http://{addr}");
    let remote = |args: &[&str]| bin().arg("--api").arg(&api).args(args).output().unwrap();
    let out = remote(&["analyze", SHEETABLE, "--wait", "--json"]);
    let personas: Vec<PersonaView> = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(personas.len(), 4);

    let repos = ok(&remote(&["repos"]));
    assert!(repos.contains("sheetable~sheetable"), "{repos}");

    let missing = remote(&["personas", "show", "no-such-persona"]);
    assert_eq!(missing.status.code(), Some(2));
}
