#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use motionalign::data::{family_motion, write_motion_file, Family, FamilyParams};
use motionalign::embedding::ProviderSpec;
use motionalign::model::{ModelConfig, MotionAutoEncoder};

pub const BIN: &str = env!("CARGO_BIN_EXE_motionalign");
pub const D: usize = 16;

/// An untrained small checkpoint and two motion files in a temp directory.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub checkpoint: PathBuf,
    pub walk: PathBuf,
    pub jump: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = MotionAutoEncoder::new(ModelConfig::small(1, D, 2, 16, 60), 3).unwrap();
        let checkpoint = dir.path().join("model.ckpt");
        model
            .to_checkpoint(ProviderSpec::Stub { dim: D, seed: 2 })
            .save(&checkpoint)
            .unwrap();
        let walk = dir.path().join("walk.mclip");
        let jump = dir.path().join("jump.mclip");
        write_motion_file(
            &walk,
            &family_motion(Family::WalkInPlace, &FamilyParams::NOMINAL, 60, 30.0).unwrap(),
        )
        .unwrap();
        write_motion_file(
            &jump,
            &family_motion(Family::Jump, &FamilyParams::NOMINAL, 40, 30.0).unwrap(),
        )
        .unwrap();
        Self {
            dir,
            checkpoint,
            walk,
            jump,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn ckpt(&self) -> &str {
        self.checkpoint.to_str().unwrap()
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

/// Stdout without its final newline.
pub fn stdout_body(o: &Output) -> Vec<u8> {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut b = o.stdout.clone();
    assert_eq!(b.pop(), Some(b'\n'));
    b
}

/// A `serve` child process on an ephemeral port, killed on drop.
pub struct Server {
    child: Child,
    pub base: String,
}

impl Server {
    pub fn start(checkpoint: &str) -> Self {
        let mut child = Command::new(BIN)
            .args(["serve", "--checkpoint", checkpoint, "--port", "0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Self { child, base }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

/// Status and body of a JSON POST.
pub fn post(agent: &ureq::Agent, url: &str, body: &[u8]) -> (u16, Vec<u8>) {
    let mut resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    let status = resp.status().as_u16();
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .unwrap();
    (status, bytes)
}
