use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn forge(args: &[&str]) -> (Value, Output) {
    let out = Command::new(env!("CARGO_BIN_EXE_forge")).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().last().unwrap_or_else(|| panic!("no output; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    (serde_json::from_str(line).unwrap(), out)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_seeds(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("seeds.jsonl");
    let rows = [
        ("wvs-1", "ar", "How important is family in your life?", "Very important"),
        ("wvs-2", "de", "Should work always come first?", "Disagree"),
        ("gas-3", "ar", "Do you trust people you meet for the first time?", "Not very much"),
    ];
    let text: String = rows
        .iter()
        .map(|(id, c, q, a)| {
            format!(
                "{}\n",
                serde_json::json!({"seed_id": id, "question": q, "target_culture": c, "attested_answer": a,
                    "source": if id.starts_with("wvs") { "WVS" } else { "GAS" }})
            )
        })
        .collect();
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn generate_refine_export_analyze_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds = write_seeds(tmp.path());
    let t = tmp.path().join("transcripts");
    let r = tmp.path().join("refined");

    let (v, out) = forge(&["generate", "--seeds", p(&seeds), "--culture", "ar", "--max-turns", "4", "--out", p(&t)]);
    assert!(out.status.success(), "{v}");
    assert_eq!(v["status"], "done");
    assert_eq!(v["kind"], "generate");
    assert_eq!(v["progress"]["done"], 2);

    // Second run skips everything already written.
    let (v, _) = forge(&["generate", "--seeds", p(&seeds), "--culture", "ar", "--max-turns", "4", "--out", p(&t)]);
    assert_eq!(v["skipped"].as_array().unwrap().len(), 2);

    let (v, out) = forge(&["refine", "--transcripts", p(&t), "--out", p(&r), "--target-count", "5"]);
    assert!(out.status.success(), "{v}");
    let manifest = &v["manifest"];
    assert_eq!(manifest["total_seeds"], 2);
    assert_eq!(manifest["total_samples"], 10);
    let samples = manifest["samples_files"]["ar"].as_str().unwrap().to_string();

    let ft = tmp.path().join("ft.jsonl");
    let (v, out) = forge(&["export", "--samples", &samples, "--culture", "ar", "--out", p(&ft)]);
    assert!(out.status.success(), "{v}");
    assert_eq!(v["manifest"]["count"], 10);
    assert_eq!(v["manifest"]["epochs"], 12);
    let first: Value = serde_json::from_str(fs::read_to_string(&ft).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["messages"][0]["role"], "system");
    assert_eq!(first["messages"][2]["role"], "assistant");

    let a = tmp.path().join("analysis");
    let (v, out) = forge(&["analyze", "--transcripts", p(&t), "--out", p(&a), "--samples", &samples, "--topics"]);
    assert!(out.status.success(), "{v}");
    assert_eq!(v["report"]["sessions"], 2);
    assert!(v["report"]["topic_mix"].is_object());
    assert!(v["report"]["diversity"]["mean_gain"].as_f64().unwrap() >= 0.0);
    assert!(a.join("report.csv").exists());
}

#[test]
fn stage_flags_change_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds = write_seeds(tmp.path());
    let t = tmp.path().join("t");
    forge(&["generate", "--seeds", p(&seeds), "--limit", "1", "--max-turns", "2", "--out", p(&t)]);
    let (v, out) = forge(&["refine", "--transcripts", p(&t), "--out", p(&tmp.path().join("r")), "--no-verify", "--no-diversify"]);
    assert!(out.status.success(), "{v}");
    assert_eq!(v["manifest"]["stages"], "generate");
}

#[test]
fn vsm_and_moderation_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let bank = tmp.path().join("bank.csv");
    let mut text = String::from("q_index,text\n");
    for q in 1..=24 {
        text.push_str(&format!("{q},\"How important is item {q} to you?\"\n"));
    }
    fs::write(&bank, text).unwrap();
    let reference = tmp.path().join("ref.csv");
    fs::write(&reference, "culture,PDI,IDV,MAS,UAI,LTO,IVR\nen,40,91,62,46,26,68\nar,80,38,53,68,23,34\n").unwrap();
    let report = tmp.path().join("vsm.json");
    let (v, out) = forge(&[
        "eval", "vsm", "--bank", p(&bank), "--reference", p(&reference), "--culture", "en,ar", "--repetitions", "2",
        "--out", p(&report),
    ]);
    assert!(out.status.success(), "{v}");
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    // The anchor is calibrated onto its own reference row.
    assert!(reports[0]["distance"].as_f64().unwrap() < 1e-6);
    assert_eq!(reports[1]["respondents"], 2);
    assert!(report.exists());

    let data = tmp.path().join("off.tsv");
    fs::write(&data, "text\tlabel\nyou are great\tNOT_OFF\nyou idiot\tOFF\nnice day\tNOT_OFF\n").unwrap();
    let out_path = tmp.path().join("mod.json");
    let (v, out) = forge(&[
        "eval", "mod", "--dataset", p(&data), "--adapter", "tsv", "--task", "offensive_detect", "--culture", "ar",
        "--out", p(&out_path),
    ]);
    assert!(out.status.success(), "{v}");
    let f1 = v["report"]["datasets"][0]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(out_path.with_extension("csv").exists());
}

#[test]
fn errors_are_reported_as_failed_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (v, out) = forge(&["generate", "--seeds", p(&tmp.path().join("missing.jsonl")), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert_eq!(v["status"], "failed");
    assert!(v["error"].as_str().unwrap().contains("missing.jsonl"));

    let seeds = write_seeds(tmp.path());
    let (v, out) = forge(&["generate", "--seeds", p(&seeds), "--culture", "xx", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert_eq!(v["status"], "failed");
}

#[test]
fn unreachable_backend_fails_the_job() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds = write_seeds(tmp.path());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = tmp.path().join("forge.toml");
    fs::write(
        &config,
        format!(
            "[retry]\nmax_attempts = 1\nbase_delay_ms = 0\n[backends.remote]\nendpoint = \"http://127.0.0.1:{port}/v1\"\nmodel = \"m\"\ntimeout_secs = 2\n[roles]\ncontact = \"remote\"\ndelegate = \"remote\"\n"
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("t");
    let (v, out) = forge(&["--config", p(&config), "generate", "--seeds", p(&seeds), "--max-turns", "2", "--out", p(&out_dir)]);
    assert!(!out.status.success());
    assert_eq!(v["status"], "failed");
    assert_eq!(v["failures"].as_object().unwrap().len(), 3);
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("forge.toml");
    fs::write(&config, "[roles]\njudge = \"nowhere\"\n").unwrap();
    let t = tmp.path().join("t");
    fs::create_dir(&t).unwrap();
    let (v, out) = forge(&["--config", p(&config), "analyze", "--transcripts", p(&t)]);
    assert!(!out.status.success());
    assert!(v["error"].as_str().unwrap().contains("nowhere"));
}

fn http(addr: &str, method: &str, path: &str, body: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    let code = resp.split_whitespace().nth(1)?.parse().ok()?;
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Some((code, body))
}

#[test]
fn serve_exposes_sessions_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds = write_seeds(tmp.path());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["serve", "--addr", &addr, "--seeds", p(&seeds)])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let result = loop {
        if let Some(r) = http(&addr, "POST", "/sessions", r#"{"seed_id":"wvs-2"}"#) {
            break Some(r);
        }
        if start.elapsed() > Duration::from_secs(20) {
            break None;
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    let checks = (|| {
        let (code, body) = result.ok_or("server never came up")?;
        if code != 201 {
            return Err(format!("create: {code} {body}"));
        }
        let id = serde_json::from_str::<Value>(&body).map_err(|e| e.to_string())?["session_id"].as_str().unwrap_or("").to_string();
        let (code, _) = http(&addr, "POST", &format!("/sessions/{id}/advance"), "").ok_or("advance")?;
        if code != 200 {
            return Err(format!("advance: {code}"));
        }
        let (_, events) = http(&addr, "GET", &format!("/sessions/{id}/events?after=0"), "").ok_or("events")?;
        let page: Value = serde_json::from_str(&events).map_err(|e| e.to_string())?;
        if page["last_sequence"].as_u64() != Some(3) {
            return Err(format!("events: {page}"));
        }
        Ok(())
    })();
    child.kill().unwrap();
    child.wait().unwrap();
    checks.unwrap();
}
