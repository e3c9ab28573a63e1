//! JSON-lines batch files: one shot per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nuclear_readout::analysis::ShotTotals;
use nuclear_readout::trajectory::{BatchResult, ReadTrace};
use nuclear_readout::Nuclear;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotLine {
    pub prepared: Nuclear,
    pub seed: u64,
    pub total1: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total2: Option<u32>,
    /// Read1 photons within the first `herald_cycles` cycles.
    pub herald_cycles: u32,
    pub herald_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_read1: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_read2: Option<Vec<u32>>,
}

impl ShotLine {
    /// Totals for a herald window of `herald_cycles`; recomputed from the
    /// per-cycle counts when the stored window differs.
    pub fn totals(&self, herald_cycles: u32) -> CliResult<ShotTotals> {
        let herald_count = if herald_cycles == self.herald_cycles {
            self.herald_count
        } else if let Some(counts) = &self.counts_read1 {
            counts.iter().take(herald_cycles as usize).sum()
        } else {
            return Err(CliError::Config(format!(
                "batch stores herald counts for {} cycles only; rerun simulate with \
                 --full-cycles to analyze a {herald_cycles}-cycle window",
                self.herald_cycles
            )));
        };
        Ok(ShotTotals {
            prepared: self.prepared,
            total1: self.total1,
            total2: self.total2,
            herald_count,
            herald_cycles,
        })
    }
}

pub fn write_batch<W: Write>(
    mut w: W,
    batch: &BatchResult,
    herald_cycles: u32,
    full_cycles: bool,
) -> std::io::Result<()> {
    for r in &batch.records {
        let line = ShotLine {
            prepared: r.prepared,
            seed: r.seed,
            total1: r.total1(),
            total2: r.total2(),
            herald_cycles,
            herald_count: r.read1.count_in_first(herald_cycles),
            counts_read1: full_cycles.then(|| r.read1.dense()),
            counts_read2: if full_cycles {
                r.read2.as_ref().map(ReadTrace::dense)
            } else {
                None
            },
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_batch(path: &Path) -> CliResult<Vec<ShotLine>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let shot: ShotLine = serde_json::from_str(&line).map_err(|e| {
            CliError::Config(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(shot);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{} holds no shots", path.display())));
    }
    Ok(out)
}
