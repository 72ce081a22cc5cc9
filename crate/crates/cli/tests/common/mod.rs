#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use reqwest::blocking::multipart::Form;
use reqwest::blocking::Client;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfexplain"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

pub fn pima_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pima.csv")
}

/// `signal` separates the classes perfectly; `noise` is never worth a split.
pub fn toy_csv() -> String {
    let mut text = String::from("signal,noise,label\n");
    for i in 0..40 {
        let noise = (i * 7) % 11;
        text.push_str(&format!("{i},{noise},{}\n", u8::from(i >= 20)));
    }
    text
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// A `rfexplain serve` child process on an ephemeral port.
pub struct ServeProcess {
    pub child: Child,
    pub base: String,
}

impl ServeProcess {
    pub fn start(data_dir: &Path) -> ServeProcess {
        ServeProcess::start_on(data_dir, 0).expect("server did not start")
    }

    /// `Err` carries the exit status and stderr when the process dies
    /// before announcing its address.
    pub fn start_on(data_dir: &Path, port: u16) -> Result<ServeProcess, (std::process::ExitStatus, String)> {
        let mut child = bin()
            .args(["serve", "--port", &port.to_string(), "--data-dir"])
            .arg(data_dir)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let mut seen = String::new();
        for line in lines.by_ref() {
            let line = line.unwrap();
            if let Some(addr) = line.strip_prefix("listening on ") {
                let base = addr.trim().to_string();
                std::thread::spawn(move || lines.for_each(drop));
                return Ok(ServeProcess { child, base });
            }
            seen.push_str(&line);
            seen.push('\n');
        }
        Err((child.wait().unwrap(), seen))
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn port(&self) -> u16 {
        self.base.rsplit(':').next().unwrap().parse().unwrap()
    }

    /// Sends SIGINT and returns the exit status.
    pub fn interrupt(mut self) -> std::process::ExitStatus {
        let status = Command::new("kill")
            .args(["-INT", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        self.child.wait().unwrap()
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn upload(client: &Client, server: &ServeProcess, csv: Vec<u8>, label: &str) -> reqwest::blocking::Response {
    let form = Form::new()
        .part(
            "file",
            reqwest::blocking::multipart::Part::bytes(csv).file_name("data.csv"),
        )
        .text("label_column", label.to_string());
    client.post(server.url("/datasets")).multipart(form).send().unwrap()
}

/// Posts a training request and polls until the model leaves `training`.
pub fn train_model(client: &Client, server: &ServeProcess, body: serde_json::Value) -> serde_json::Value {
    let response = client.post(server.url("/models")).json(&body).send().unwrap();
    assert_eq!(
        response.status(),
        reqwest::StatusCode::ACCEPTED,
        "{:?}",
        response.text()
    );
    let created: serde_json::Value = response.json().unwrap();
    let id = created["model_id"].as_str().unwrap().to_string();
    for _ in 0..1200 {
        let record: serde_json::Value = client
            .get(server.url(&format!("/models/{id}")))
            .send()
            .unwrap()
            .json()
            .unwrap();
        if record["status"] != "training" {
            return record;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    panic!("model {id} never finished training");
}
