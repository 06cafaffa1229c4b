pub mod corpus;
pub mod probe;
pub mod report;
pub mod sim;
pub mod synth;
pub mod wsd;

use std::path::Path;

use serde::Serialize;

use crate::output::{Output, Table};

pub struct Ctx {
    pub seed: u64,
    pub out: Output,
}

#[derive(Serialize)]
struct Config<'a, A: Serialize> {
    seed: u64,
    #[serde(flatten)]
    args: &'a A,
}

impl Ctx {
    /// Writes `<stem>.json` with the arguments and seed, and `<stem>.csv`.
    pub fn report<A: Serialize, R: Serialize>(
        &mut self,
        stem: &str,
        command: &str,
        args: &A,
        result: &R,
        table: &Table,
    ) -> anyhow::Result<()> {
        let cfg = Config { seed: self.seed, args };
        self.out.report(stem, command, &cfg, result)?;
        self.out.table(stem, table)
    }
}

/// A referenced input is missing. Raised before any computation starts.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn require<P: AsRef<Path>>(paths: impl IntoIterator<Item = P>) -> anyhow::Result<()> {
    let missing: Vec<String> =
        paths.into_iter().filter(|p| !p.as_ref().is_file()).map(|p| p.as_ref().display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(InputError(format!("missing input file(s): {}", missing.join(", "))).into())
    }
}
