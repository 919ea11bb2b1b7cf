use std::path::Path;

use serde::{Deserialize, Serialize};

use harmony_core::simulator::{gen_zipf_workload, Workload, WorkloadSource};
use harmony_core::LoadMatrix;

use crate::error::{CliError, CliResult};
use crate::io::{read_text, read_trace, write_text};
use crate::TraceArgs;

/// JSON trace layout: `micro_batches[mb][expert][gpu]` token counts.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceJson {
    num_experts: usize,
    num_gpus: usize,
    micro_batches: Vec<Vec<Vec<u64>>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

fn format_of(path: &Path) -> CliResult<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(Format::Csv),
        Some("json") => Ok(Format::Json),
        _ => Err(CliError::usage(format!(
            "{}: expected a .csv or .json extension",
            path.display()
        ))),
    }
}

pub fn run(args: &TraceArgs) -> CliResult<()> {
    let out_format = format_of(&args.output)?;
    let shape = args.shape.cluster()?;
    let workload = match &args.input {
        None => gen_zipf_workload(&shape, args.s, args.tokens_per_gpu, args.microbatches, args.seed)?,
        Some(path) => match format_of(path)? {
            Format::Csv => read_trace(path, shape.num_experts, shape.num_gpus)?,
            Format::Json => from_json(&read_text(path)?).map_err(|e| e.in_file(path))?,
        },
    };
    let text = match out_format {
        Format::Csv => {
            let mut buf = Vec::new();
            workload.write_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => {
            let (e, g) = workload
                .micro_batches
                .first()
                .map_or((shape.num_experts, shape.num_gpus), |mb| {
                    (mb.num_experts(), mb.num_gpus())
                });
            to_json(&workload, e, g)
        }
    };
    write_text(&args.output, &text)?;
    println!("micro_batches: {}", workload.len());
    println!(
        "tokens: {}",
        workload.micro_batches.iter().map(LoadMatrix::total).sum::<u64>()
    );
    println!("wrote: {}", args.output.display());
    Ok(())
}

fn to_json(w: &Workload, num_experts: usize, num_gpus: usize) -> String {
    let doc = TraceJson {
        num_experts,
        num_gpus,
        micro_batches: w
            .micro_batches
            .iter()
            .map(|mb| (0..mb.num_experts()).map(|e| mb.row(e).to_vec()).collect())
            .collect(),
    };
    let mut text = serde_json::to_string(&doc).expect("trace serializes");
    text.push('\n');
    text
}

fn from_json(text: &str) -> CliResult<Workload> {
    let doc: TraceJson = serde_json::from_str(text).map_err(|e| CliError::usage(e.to_string()))?;
    let mut micro_batches = Vec::with_capacity(doc.micro_batches.len());
    for (i, rows) in doc.micro_batches.into_iter().enumerate() {
        let mb = LoadMatrix::from_rows(rows).map_err(|e| CliError::usage(format!("micro-batch {i}: {e}")))?;
        mb.check_dims(doc.num_experts, doc.num_gpus)
            .map_err(|e| CliError::usage(format!("micro-batch {i}: {e}")))?;
        micro_batches.push(mb);
    }
    Ok(Workload {
        micro_batches,
        source: WorkloadSource::Trace { path: String::new() },
    })
}
