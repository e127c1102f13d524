use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CUBE_OBJ: &str = "\
v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 4 7 3\nf 4 8 7\nf 1 5 8\nf 1 8 4\nf 2 3 7\nf 2 7 6
";

/// Small renders keep the end-to-end runs quick.
const FAST_CONFIG: &str = "\
[logging]
level = \"warn\"

[loop.render]
width = 96
height = 96

[eval]
workers = 2

[eval.metric_render]
width = 96
height = 96
";

fn idea23d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idea23d")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mini_manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini/manifest.json")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("idea23d.toml"), FAST_CONFIG).unwrap();
    dir
}

#[test]
fn render_writes_six_views_and_grid() {
    let dir = workspace();
    fs::write(dir.path().join("cube.obj"), CUBE_OBJ).unwrap();
    let out = idea23d(dir.path(), &["render", "cube.obj", "--out-dir", "out"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut names: Vec<_> =
        fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["back.png", "bottom.png", "front.png", "grid.png", "left.png", "right.png", "top.png"]);
    let front = image::open(dir.path().join("out/front.png")).unwrap();
    assert_eq!((front.width(), front.height()), (96, 96));
}

#[test]
fn missing_idea_file_is_a_usage_error() {
    let dir = workspace();
    let out = idea23d(dir.path(), &["run", "--idea", "missing.json", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.json"), "{}", stderr(&out));
}

#[test]
fn explicit_missing_config_is_a_usage_error() {
    let dir = workspace();
    let out = idea23d(dir.path(), &["--config", "nope.toml", "inspect", "."]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.toml"));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let dir = workspace();
    let out = idea23d(dir.path(), &["eval", "--dataset", "d.json", "--mode", "best", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_mesh_is_a_domain_error_naming_the_stage() {
    let dir = workspace();
    fs::write(dir.path().join("bad.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    let out = idea23d(dir.path(), &["render", "bad.obj", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("load mesh"), "{}", stderr(&out));
}

#[test]
fn run_then_inspect() {
    let dir = workspace();
    fs::write(dir.path().join("idea.json"), r#"{"text": ["a green frog"]}"#).unwrap();
    let out = idea23d(dir.path(), &["--seed", "11", "run", "--idea", "idea.json", "--out", "session"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("seed: 11"));
    let session = dir.path().join("session");
    for f in ["session.jsonl", "final/model.glb", "final/model.obj", "final/grid.png", "final/views/front.png"] {
        assert!(session.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(session.join("session.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], 11);

    let out = idea23d(dir.path(), &["inspect", "session"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("seed 11"));
    assert!(table.contains("prompt 0:"));
}

#[test]
fn omitted_seed_is_drawn_and_printed() {
    let dir = workspace();
    fs::write(dir.path().join("idea.json"), r#"{"text": ["a red car"]}"#).unwrap();
    let out = idea23d(dir.path(), &["run", "--idea", "idea.json", "--out", "s"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let err = stderr(&out);
    let printed: u64 = err.lines().find_map(|l| l.strip_prefix("seed: ")).unwrap().trim().parse().unwrap();
    let log = fs::read_to_string(dir.path().join("s/session.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["seed"], printed);
}

#[test]
fn text_only_eval_on_mini_writes_a_parseable_report() {
    let dir = workspace();
    let manifest = mini_manifest();
    let out = idea23d(
        dir.path(),
        &[
            "--seed",
            "1",
            "eval",
            "--dataset",
            manifest.to_str().unwrap(),
            "--mode",
            "text_only",
            "--report",
            "rep/report.json",
            "--session-root",
            "sessions",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"].as_array().unwrap().len(), 1);
    assert_eq!(report["summary"][0]["mode"], "text_only");
    assert_eq!(report["summary"][0]["cases"], 12);
    assert_eq!(report["rows"].as_array().unwrap().len(), 12);
    assert!(report["summary"][0]["mean_clip"].is_f64());
    assert!(dir.path().join("rep/report.txt").is_file());
    assert!(dir.path().join("sessions/text_only").is_dir());
}

#[test]
fn help_lists_every_flag() {
    let dir = workspace();
    let top = String::from_utf8(idea23d(dir.path(), &["--help"]).stdout).unwrap();
    for flag in ["--config", "--seed", "--log-level"] {
        assert!(top.contains(flag), "{flag}");
    }
    for (cmd, flags) in [
        ("run", &["--idea", "--out"][..]),
        ("eval", &["--dataset", "--mode", "--report", "--session-root"]),
        ("render", &["--out-dir"]),
        ("inspect", &[]),
    ] {
        let help = String::from_utf8(idea23d(dir.path(), &[cmd, "--help"]).stdout).unwrap();
        for flag in flags.iter().chain(&["--config", "--seed", "--log-level"]) {
            assert!(help.contains(flag), "{cmd} {flag}");
        }
    }
}
