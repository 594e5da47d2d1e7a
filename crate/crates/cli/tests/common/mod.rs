#![allow(dead_code)]

use std::ffi::OsStr;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Output, Stdio};
use std::time::{Duration, Instant};

pub fn condb() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_condb"));
    for var in ["CONDB_CONFIG", "CONDB_CLIENT_CONFIG", "CONDB_BASE_URL", "CONDB_BIND_ADDRESS", "CONDB_STORE_PATH"] {
        cmd.env_remove(var);
    }
    cmd
}

pub fn run<S: AsRef<OsStr>>(args: &[S]) -> Output {
    condb().args(args).output().expect("spawn condb")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// A `condb serve` child process on a free port. Killed on drop.
pub struct Server {
    pub child: Child,
    pub base_url: String,
}

impl Server {
    pub fn start(db: &Path, extra: &[&str]) -> Server {
        Self::spawn(condb(), db, extra)
    }

    /// Same as `start`, at the lowest CPU priority.
    pub fn start_niced(db: &Path, extra: &[&str]) -> Server {
        let mut cmd = Command::new("nice");
        cmd.args(["-n", "19", env!("CARGO_BIN_EXE_condb")]);
        Self::spawn(cmd, db, extra)
    }

    fn spawn(mut cmd: Command, db: &Path, extra: &[&str]) -> Server {
        let mut child = cmd
            .args(["serve", "--bind", "127.0.0.1:0", "--db"])
            .arg(db)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn condb serve");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_owned();
        Server {
            child,
            base_url: format!("http://{addr}"),
        }
    }

    pub fn terminate(mut self) -> ExitStatus {
        let status = Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s;
            }
            assert!(Instant::now() < deadline, "server did not stop after SIGTERM");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
