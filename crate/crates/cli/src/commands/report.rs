use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use super::{require, Ctx};

#[derive(Args, Debug, Serialize)]
pub struct ReportCmd {
    /// CSV reports with identical headers, concatenated in the given order.
    #[arg(long, num_args = 1.., required = true)]
    pub merge: Vec<PathBuf>,
    /// Name of the merged file inside the output directory.
    #[arg(long, default_value = "merged.csv")]
    pub name: String,
}

pub fn report(ctx: &mut Ctx, a: &ReportCmd) -> Result<String> {
    require(&a.merge)?;
    let mut header: Option<csv::StringRecord> = None;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut rows = 0;
    for path in &a.merge {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let h = r.headers().with_context(|| format!("reading {}", path.display()))?.clone();
        match &header {
            None => {
                w.write_record(&h)?;
                header = Some(h);
            }
            Some(first) if *first != h => {
                let cols = |r: &csv::StringRecord| r.iter().collect::<Vec<_>>().join(",");
                bail!("{} has columns {}, expected {}", path.display(), cols(&h), cols(first));
            }
            Some(_) => {}
        }
        for rec in r.records() {
            w.write_record(&rec.with_context(|| format!("reading {}", path.display()))?)?;
            rows += 1;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    ctx.out.bytes(&a.name, &bytes)?;
    Ok(format!("{rows} rows from {} files", a.merge.len()))
}
