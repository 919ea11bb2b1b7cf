use std::fs::File;
use std::io::ErrorKind;
use std::path::Path;

use harmony_core::simulator::{parse_trace_dims, Workload, WorkloadSource};

use crate::error::{CliError, CliResult};

/// Reads an input file; a missing or unreadable file is a usage error.
pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| input_error(path, e))
}

pub fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| input_error(path, e))
}

fn input_error(path: &Path, e: std::io::Error) -> CliError {
    match e.kind() {
        ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidData => {
            CliError::usage(format!("{}: {e}", path.display()))
        }
        _ => CliError::runtime(format!("{}: {e}", path.display())),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Reads a trace CSV against explicit dimensions.
pub fn read_trace(path: &Path, num_experts: usize, num_gpus: usize) -> CliResult<Workload> {
    let mut w = parse_trace_dims(open(path)?, num_experts, num_gpus).map_err(|e| CliError::from(e).in_file(path))?;
    w.source = WorkloadSource::Trace {
        path: path.display().to_string(),
    };
    Ok(w)
}

/// Per-expert token count averaged over the micro-batches of `w`.
pub fn mean_expert_loads(w: &Workload, num_experts: usize) -> Vec<f64> {
    let mut totals = vec![0.0; num_experts];
    for mb in &w.micro_batches {
        for (t, x) in totals.iter_mut().zip(mb.expert_totals()) {
            *t += x as f64;
        }
    }
    let n = w.len().max(1) as f64;
    totals.into_iter().map(|t| t / n).collect()
}
