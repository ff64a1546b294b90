use bsmart_core::autonomic::{Mode, Stimulus};
use bsmart_core::runtime::RunSummary;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_bsmart");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

fn bsmart(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BSMART_CONFIG")
        .env_remove("BSMART_API")
        .output()
        .unwrap()
}

fn summary(out: &Path) -> RunSummary {
    serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn zero_tick_run_writes_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bsmart(&["run", "--ticks", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s.ticks, 0);
    assert!(s.events.is_empty() && s.tickets.is_empty() && s.mode_history.is_empty());
    assert_eq!(s.final_mode.mode, Mode::Initializing);
    for f in ["bkr", "broker", "config.json", "scenario.json", "timeline.jsonl", "journal.jsonl"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn bad_config_lists_every_error_and_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bsmart(&[
        "run",
        "--config",
        fixture("invalid_config.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("3 error(s)"), "{err}");
    assert!(err.contains("tick_seconds") && err.contains("probe_ticks") && err.contains("min_comfort_width"));
    assert!(!out.exists());

    let o = bsmart(&[
        "run",
        "--config",
        fixture("corrupt_config.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn environment_supplies_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let from_env = dir.path().join("env");
    let o = Command::new(BIN)
        .args(["run"])
        .env("BSMART_TICKS", "3")
        .env("BSMART_OUT", &from_env)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(summary(&from_env).ticks, 3);

    let from_flag = dir.path().join("flag");
    let o = Command::new(BIN)
        .args(["run", "--ticks", "5", "--out", from_flag.to_str().unwrap()])
        .env("BSMART_TICKS", "3")
        .env("BSMART_OUT", &from_env)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(summary(&from_flag).ticks, 5);
    assert_eq!(summary(&from_env).ticks, 3);
}

#[test]
fn rerunning_an_artifacts_directory_resumes_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(bsmart(&["run", "--ticks", "1500", "--out", out.to_str().unwrap()]).status.success());
    assert!(bsmart(&["run", "--ticks", "20", "--out", out.to_str().unwrap()]).status.success());
    let s = summary(&out);
    assert_eq!(s.ticks, 1520);
    assert_eq!(s.final_mode.mode, Mode::DetectingChange);
    assert!(bsmart(&["run", "--ticks", "20", "--fresh", "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(summary(&out).ticks, 20);
}

#[test]
fn unreachable_api_exits_with_a_retry_hint() {
    let o = bsmart(&["status", "--api", "http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cannot reach") && err.contains("retry"), "{err}");
}

struct Server {
    child: Child,
    api: String,
    out: PathBuf,
}

impl Server {
    fn start(out: PathBuf, scenario: &Path, ticks: u64) -> Self {
        let child = Command::new(BIN)
            .args([
                "run",
                "--hold",
                "--linger",
                "--api-addr",
                "127.0.0.1:0",
                "--ticks",
                &ticks.to_string(),
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let deadline = Instant::now() + Duration::from_secs(60);
        let addr = loop {
            if let Ok(a) = std::fs::read_to_string(out.join("api.addr")) {
                break a;
            }
            assert!(Instant::now() < deadline, "server never bound");
            std::thread::sleep(Duration::from_millis(50));
        };
        Server {
            child,
            api: format!("http://{addr}"),
            out,
        }
    }

    fn call(&self, args: &[&str]) -> serde_json::Value {
        let mut all = args.to_vec();
        all.extend(["--api", &self.api]);
        let o = bsmart(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    }

    fn wait_for_tick(&self, tick: u64) {
        let deadline = Instant::now() + Duration::from_secs(120);
        while self.call(&["status"])["tick"].as_u64().unwrap() < tick {
            assert!(Instant::now() < deadline, "run stalled");
            std::thread::sleep(Duration::from_millis(100));
        }
    }

    fn stop(mut self) {
        Command::new("kill")
            .args(["-INT", &self.child.id().to_string()])
            .status()
            .unwrap();
        let status = self.child.wait().unwrap();
        assert!(status.success());
    }
}

#[test]
fn operator_verbs_complete_a_fault_headlessly() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path().join("run"), &fixture("bias_scenario.json"), 3010);
    server.wait_for_tick(3010);

    let status = server.call(&["status"]);
    assert_eq!(status["mode"]["mode"], "Interfacing");
    let tickets = server.call(&["tickets"]);
    let id = tickets[0]["ticket_id"].as_str().unwrap().to_string();
    assert_eq!(tickets[0]["actor_id"], "maintenance-chiller");

    let energy = server.call(&["report", "energy"]);
    assert!(energy["hvac_kwh"].as_f64().unwrap() > 0.0);
    let o = bsmart(&["report", "nonsense", "--api", &server.api]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("supported"));

    let actor = ["--actor", "maintenance-chiller"];
    let mut ack = vec!["ack", id.as_str()];
    ack.extend(actor);
    server.call(&ack);
    let mut resolve = vec!["resolve", id.as_str(), "repaired", "--request-id", "fix-1"];
    resolve.extend(actor);
    let first = server.call(&resolve);
    let retried = server.call(&resolve);
    assert_eq!(first, retried);
    server.call(&["advance", "2"]);
    assert_eq!(server.call(&["status"])["mode"]["mode"], "DetectingChange");

    let comfort = server.call(&["comfort", "zone-01", "21", "23", "--actor", "tenants"]);
    assert_eq!(comfort["applied"]["lower"], 21.0);
    let timeline = server.call(&["timeline", "--since", "0"]);
    assert!(timeline.as_array().unwrap().iter().any(|e| e["kind"] == "ComfortChanged"));

    let out = server.out.clone();
    server.stop();
    let s = summary(&out);
    assert!(s
        .mode_history
        .iter()
        .any(|e| e.stimulus == Stimulus::FaultResolvedNoEquipChange && e.to == Mode::DetectingChange));
    assert!(!out.join("api.addr").exists());
}

#[test]
fn legacy_replay_reports_events() {
    let o = bsmart(&[
        "replay-legacy",
        "--mapping",
        fixture("legacy_mapping.json").to_str().unwrap(),
        "--dump",
        fixture("legacy_dump.jsonl").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["emission"], "Legacy");
    assert_eq!(v["events"].as_array().unwrap().len(), 2);
    assert!(v.get("vectors").is_none());
}
