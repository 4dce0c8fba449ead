mod common;

use std::collections::HashMap;
use std::io::Write;
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use common::{bundled, ServeProcess};
use flexpipe::deploy::daemon::DeployRequest;
use flexpipe::deploy::{deploy_distributed, Daemon, DaemonClient, DeployError, PipelineOptions};
use flexpipe::{KernelRegistry, RunState};

const SERVER_PART: &str = "\
kernels:
  - kernel: FrameSource
    id: source
    params: {hz: 50, payload_bytes: 128}
    output:
      - {port_name: out, connection_type: local, semantics: blocking}
  - kernel: Sink
    id: sink
local_connections:
  - {send_kernel: source, send_port_name: out, recv_kernel: sink, recv_port_name: in}
";

fn start() -> (flexpipe::deploy::DaemonHandle, String) {
    let daemon = Daemon::bind("127.0.0.1:0".parse().unwrap(), KernelRegistry::builtin()).unwrap();
    let h = daemon.spawn();
    let addr = h.local_addr().to_string();
    (h, addr)
}

fn request(id: &str, recipe: &str) -> DeployRequest {
    DeployRequest {
        pipeline_id: id.into(),
        recipe: recipe.into(),
        fingerprint: KernelRegistry::builtin().fingerprint(),
    }
}

#[test]
fn deploy_status_teardown_lifecycle() {
    let (_daemon, addr) = start();
    let mut c = DaemonClient::connect(&addr).unwrap();
    let ping = c.ping().unwrap();
    assert_eq!(
        ping.fingerprint,
        Some(KernelRegistry::builtin().fingerprint())
    );

    let reply = c.deploy(&request("p1", SERVER_PART)).unwrap();
    assert_eq!(reply.state, Some(RunState::Running));
    assert_eq!(c.status(None).unwrap().pipelines, vec!["p1".to_owned()]);
    thread::sleep(Duration::from_millis(200));
    assert_eq!(c.status(Some("p1")).unwrap().state, Some(RunState::Running));

    let done = c.teardown("p1").unwrap();
    let ids: Vec<&str> = done
        .reports
        .iter()
        .map(|r| r.instance_id.as_str())
        .collect();
    assert!(ids.contains(&"source") && ids.contains(&"sink"), "{ids:?}");
    assert!(
        done.reports.iter().all(|r| r.error.is_none()),
        "{:?}",
        done.reports
    );
    assert!(done
        .reports
        .iter()
        .any(|r| r.instance_id == "sink" && r.steps > 0));
    assert!(c.status(None).unwrap().pipelines.is_empty());
    assert!(matches!(c.teardown("p1"), Err(DeployError::Remote { .. })));
}

#[test]
fn rejected_requests_leave_daemon_serving() {
    let (_daemon, addr) = start();
    let mut c = DaemonClient::connect(&addr).unwrap();

    let mut wrong = request("p", SERVER_PART);
    wrong.fingerprint = "0000000000000000".into();
    let err = c.deploy(&wrong).unwrap_err();
    assert!(err.to_string().contains("registry"), "{err}");

    let invalid = SERVER_PART.replace("kernel: Sink", "kernel: NoSuchKernel");
    assert!(matches!(
        c.deploy(&request("p", &invalid)),
        Err(DeployError::Invalid(v)) if !v.is_empty()
    ));
    assert!(c.deploy(&request("p", "kernels: [oops")).is_err());

    for (cmd, body) in [
        ("DEPLOY", b"not json".to_vec()),
        ("TEARDOWN", b"{}".to_vec()),
        ("STATUS", vec![0xff, 0x00]),
        ("EXPLODE", b"{}".to_vec()),
    ] {
        assert!(
            matches!(c.raw_request(cmd, body), Err(DeployError::Remote { .. })),
            "{cmd}"
        );
    }

    c.deploy(&request("dup", SERVER_PART)).unwrap();
    assert!(c.deploy(&request("dup", SERVER_PART)).is_err());
    assert!(c.ping().is_ok());
}

#[test]
fn garbage_bytes_close_only_that_session() {
    let (_daemon, addr) = start();
    let mut raw = TcpStream::connect(&addr).unwrap();
    raw.write_all(&[0xde, 0xad, 0xbe, 0xef].repeat(64)).unwrap();
    raw.write_all(&u32::MAX.to_be_bytes()).unwrap();
    drop(raw);
    let mut c = DaemonClient::connect(&addr).unwrap();
    assert!(c.ping().is_ok());
}

#[test]
fn closing_the_control_connection_tears_down_owned_pipelines() {
    let (_daemon, addr) = start();
    let mut owner = DaemonClient::connect(&addr).unwrap();
    owner.deploy(&request("owned", SERVER_PART)).unwrap();
    let mut observer = DaemonClient::connect(&addr).unwrap();
    assert_eq!(observer.status(None).unwrap().pipelines.len(), 1);
    drop(owner);
    let end = Instant::now() + Duration::from_secs(5);
    while !observer.status(None).unwrap().pipelines.is_empty() {
        assert!(
            Instant::now() < end,
            "pipeline outlived its control connection"
        );
        thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn unreachable_daemon_is_a_control_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let servers = HashMap::from([("server".to_owned(), format!("127.0.0.1:{port}"))]);
    let err = deploy_distributed(
        &bundled("ar1_perception.yaml"),
        &servers,
        &KernelRegistry::builtin(),
        &PipelineOptions::default(),
    )
    .err()
    .expect("deploy should fail");
    assert!(!err.is_validation(), "{err}");
}

#[test]
fn serve_subprocess_hosts_a_split_pipeline() {
    let serve = ServeProcess::start();
    let mut c = DaemonClient::connect(&serve.addr).unwrap();
    assert!(c.ping().is_ok());
    drop(c);
    let servers = HashMap::from([("server".to_owned(), serve.addr.clone())]);
    let mut d = deploy_distributed(
        &bundled("ar1_perception.yaml"),
        &servers,
        &KernelRegistry::builtin(),
        &PipelineOptions::default(),
    )
    .unwrap();
    assert_eq!(d.remote_hosts(), vec!["server"]);
    thread::sleep(Duration::from_millis(1500));
    let status = d.status();
    assert!(status.iter().all(|(_, r)| r.is_ok()), "{status:?}");
    let summary = d.teardown().unwrap();
    assert!(summary.reports.iter().any(|(h, _)| h == "server"));
    assert_eq!(summary.failures().count(), 0);
}
