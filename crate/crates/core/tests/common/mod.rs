#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

use flexpipe::recipe::load_recipe;
use flexpipe::PipelineRecipe;

pub fn recipe_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("recipes")
        .join(name)
}

pub fn bundled(name: &str) -> PipelineRecipe {
    load_recipe(recipe_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_flexpipe")
}

/// A `flexpipe serve` child process on an ephemeral loopback port.
/// Killed on drop.
pub struct ServeProcess {
    child: Child,
    pub addr: String,
}

impl ServeProcess {
    pub fn start() -> Self {
        let mut child = Command::new(bin())
            .args(["serve", "--port", "0", "--bind", "127.0.0.1"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn flexpipe serve");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = String::new();
        BufReader::new(stdout)
            .read_line(&mut line)
            .expect("read listening line");
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected serve output {line:?}"))
            .to_owned();
        ServeProcess { child, addr }
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
