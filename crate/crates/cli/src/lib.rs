//! The `protorel` command-line tool: training, evaluation and inspection runs
//! that each leave a manifest behind.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure. Failures print one line to stderr:
//! `error: kind=<config|data|numeric> code=<n> message=<json string>`.

pub mod args;
mod commands;
pub mod manifest;
pub mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use args::{Cli, Command};
pub use manifest::{RunManifest, MANIFEST_FILE};

use manifest::{file_digest, Artifact, InputDigest, Outcome, MANIFEST_FORMAT, MANIFEST_VERSION};
use settings::Settings;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }

    pub fn reason_line(&self) -> String {
        format!(
            "error: kind={} code={} message={}",
            self.kind(),
            self.exit_code(),
            serde_json::to_string(&self.to_string()).expect("string serializes")
        )
    }
}

impl From<protorel::Error> for Failure {
    fn from(e: protorel::Error) -> Self {
        use protorel::Error as E;
        let message = e.to_string();
        match e {
            E::Config(_) => Failure::Config(message),
            E::Numeric(_) => Failure::Numeric(message),
            E::Data(_) | E::Encode(_) | E::Checkpoint(_) | E::Output(_) => Failure::Data(message),
        }
    }
}

impl From<protorel::DataError> for Failure {
    fn from(e: protorel::DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Bookkeeping of one command: resolved settings, inputs read, files written.
#[derive(Debug, Default)]
pub struct Run {
    pub resolved: Settings,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<Artifact>,
    pub out_dir: Option<PathBuf>,
}

impl Run {
    /// Records the digest of an input file named by `key`, if given.
    fn input(&mut self, settings: &Settings, key: &str) -> Result<Option<PathBuf>, Failure> {
        let Some(path) = settings::path(settings, key)? else {
            return Ok(None);
        };
        let sha256 = file_digest(&path)?;
        self.inputs.push(InputDigest {
            key: key.into(),
            path: path.clone(),
            sha256,
        });
        self.resolved.insert(key.into(), serde_json::json!(path));
        Ok(Some(path))
    }

    fn require_input(&mut self, settings: &Settings, key: &str) -> Result<PathBuf, Failure> {
        settings::require_path(settings, key)?;
        Ok(self.input(settings, key)?.expect("checked above"))
    }

    /// Output file inside the run directory, recorded as an artifact.
    fn artifact(&mut self, role: &str, file: &str) -> PathBuf {
        let path = self.out_dir.as_ref().expect("out dir resolved first").join(file);
        self.artifacts.push(Artifact {
            role: role.into(),
            path: path.clone(),
        });
        path
    }
}

fn default_out_dir(command: &str) -> PathBuf {
    Path::new("runs").join(command)
}

/// Runs one parsed invocation, printing results to `out`. Returns the exit
/// code.
pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    if let Some(threads) = cli.threads {
        // Fails only if the pool was already built in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let started = Instant::now();
    let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());

    let (command, prepared) = match (&cli.replay, &cli.command) {
        (Some(path), _) => match RunManifest::load(path) {
            Ok(m) => {
                let mut config = m.config.clone();
                if let Some(dir) = &cli.replay_out_dir {
                    config.insert("out_dir".into(), serde_json::json!(dir));
                }
                let checked = m.verify_inputs().map(|_| config.clone());
                (m.command.clone(), checked.map_err(|e| (e, Some(config))))
            }
            Err(e) => {
                eprintln!("{}", e.reason_line());
                return e.exit_code();
            }
        },
        (None, Some(cmd)) => {
            let (config, flags, template) = cmd.flags();
            let fallback = flags.as_object().cloned();
            let collected = settings::collect(config.as_deref(), flags, template);
            (cmd.name().to_string(), collected.map_err(|e| (e, fallback)))
        }
        (None, None) => {
            let e = Failure::Config("no command given; see --help".into());
            eprintln!("{}", e.reason_line());
            return e.exit_code();
        }
    };

    let mut state = Run::default();
    let (result, known) = match prepared {
        Ok(settings) => {
            let r = resolve_out_dir(&command, &settings, &mut state)
                .and_then(|_| commands::execute(&command, &settings, &mut state, out));
            (r, settings)
        }
        Err((e, partial)) => {
            let partial = partial.unwrap_or_default();
            let _ = resolve_out_dir(&command, &partial, &mut state);
            (Err(e), partial)
        }
    };

    // Keep user-given values the command never got to resolve.
    for (k, v) in known {
        if !v.is_null() {
            state.resolved.entry(k).or_insert(v);
        }
    }
    let outcome = Outcome::from_result(&result);
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        command,
        seed: state.resolved.get("seed").and_then(serde_json::Value::as_u64),
        config: state.resolved,
        threads: cli.threads,
        inputs: state.inputs,
        artifacts: state.artifacts,
        started_at,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outcome,
    };
    let mut code = result.as_ref().err().map_or(0, Failure::exit_code);
    if let Err(e) = &result {
        eprintln!("{}", e.reason_line());
    }
    if let Some(dir) = &state.out_dir {
        let saved = std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
            .and_then(|_| manifest.save(&dir.join(MANIFEST_FILE)));
        if let Err(e) = saved {
            eprintln!("{}", e.reason_line());
            if code == 0 {
                code = e.exit_code();
            }
        }
    }
    code
}

fn resolve_out_dir(command: &str, settings: &Settings, state: &mut Run) -> Result<(), Failure> {
    let dir = settings::path(settings, "out_dir")
        .ok()
        .flatten()
        .unwrap_or_else(|| default_out_dir(command));
    state.resolved.insert("out_dir".into(), serde_json::json!(dir));
    state.out_dir = Some(dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}
