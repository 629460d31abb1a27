use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use clap::ValueEnum;

use crate::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("cannot write output: {e}"))
}

pub fn emit(
    format: Format,
    out: Option<&Path>,
    table: &Table,
    value: &serde_json::Value,
) -> CliResult<()> {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(
            File::create(path).map_err(|e| io_failure(format!("{}: {e}", path.display())))?,
        ),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Csv => table.write_csv(sink).map_err(io_failure),
        Format::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, value).map_err(io_failure)?;
            writeln!(sink).map_err(io_failure)
        }
    }
}
