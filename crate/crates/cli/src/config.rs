//! Run configuration: one JSON document, checked field by field so that every
//! problem is reported in a single pass.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use harmony_core::adaptive::ReplacementPolicy;
use harmony_core::placement::validate_placement;
use harmony_core::simulator::{CostModel, PlacementSpec, Strategy, SweepConfig};
use harmony_core::{ClusterShape, Placement};

use crate::error::{CliError, CliResult};

const KEYS: [&str; 7] = [
    "shape",
    "strategies",
    "placement",
    "workload",
    "cost",
    "policy",
    "output_dir",
];
const ZIPF_KEYS: [&str; 5] = ["kind", "s", "tokens_per_gpu", "microbatches", "seeds"];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementConfig {
    Cayley,
    Random { seed: u64 },
    Asymmetric,
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadConfig {
    Zipf {
        s: Vec<f64>,
        tokens_per_gpu: u64,
        microbatches: usize,
        seeds: Vec<u64>,
    },
    Trace {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub shape: ClusterShape,
    pub strategies: Vec<Strategy>,
    pub placement: PlacementSpec,
    pub workload: WorkloadConfig,
    pub cost: CostModel,
    pub policy: Option<ReplacementPolicy>,
    pub output_dir: PathBuf,
}

/// Command-line values that replace config fields before validation.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub strategies: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub s_values: Option<Vec<f64>>,
    pub microbatches: Option<usize>,
    pub tokens_per_gpu: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, doc: &mut Map<String, Value>, problems: &mut Vec<String>) {
        if let Some(strategies) = &self.strategies {
            doc.insert("strategies".into(), Value::from(strategies.clone()));
        }
        if let Some(dir) = &self.output_dir {
            doc.insert("output_dir".into(), Value::from(dir.display().to_string()));
        }
        let zipf_fields = [
            ("seeds", self.seeds.as_ref().map(|v| Value::from(v.clone()))),
            ("s", self.s_values.as_ref().map(|v| Value::from(v.clone()))),
            ("microbatches", self.microbatches.map(Value::from)),
            ("tokens_per_gpu", self.tokens_per_gpu.map(Value::from)),
        ];
        for (key, value) in zipf_fields {
            let Some(value) = value else { continue };
            match doc.get_mut("workload").and_then(Value::as_object_mut) {
                Some(w) if w.get("kind").and_then(Value::as_str) == Some("zipf") => {
                    w.insert(key.into(), value);
                }
                _ => problems.push(format!("workload.{key}: flag applies to zipf workloads only")),
            }
        }
    }
}

fn field<T: DeserializeOwned>(doc: &Map<String, Value>, key: &str, problems: &mut Vec<String>) -> Option<T> {
    let value = doc.get(key)?;
    match serde_json::from_value(value.clone()) {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("{key}: {e}"));
            None
        }
    }
}

fn defaulted<T: DeserializeOwned + Default>(
    doc: &Map<String, Value>,
    key: &str,
    problems: &mut Vec<String>,
) -> Option<T> {
    match doc.get(key) {
        None => Some(T::default()),
        Some(_) => field(doc, key, problems),
    }
}

fn required<T: DeserializeOwned>(doc: &Map<String, Value>, key: &str, problems: &mut Vec<String>) -> Option<T> {
    if !doc.contains_key(key) {
        problems.push(format!("{key}: missing"));
        return None;
    }
    field(doc, key, problems)
}

/// Zipf workloads are checked key by key so that every bad key is reported.
fn workload(doc: &Map<String, Value>, problems: &mut Vec<String>) -> Option<WorkloadConfig> {
    let Some(value) = doc.get("workload") else {
        problems.push("workload: missing".into());
        return None;
    };
    let Some(w) = value.as_object() else {
        problems.push("workload: expected an object".into());
        return None;
    };
    if w.get("kind").and_then(Value::as_str) != Some("zipf") {
        return field(doc, "workload", problems);
    }
    let before = problems.len();
    for key in w.keys().filter(|k| !ZIPF_KEYS.contains(&k.as_str())) {
        problems.push(format!("workload.{key}: unknown key"));
    }
    check::<Vec<f64>>(w, "s", problems);
    check::<u64>(w, "tokens_per_gpu", problems);
    check::<usize>(w, "microbatches", problems);
    check::<Vec<u64>>(w, "seeds", problems);
    if problems.len() > before {
        return None;
    }
    field(doc, "workload", problems)
}

fn check<T: DeserializeOwned>(w: &Map<String, Value>, key: &str, problems: &mut Vec<String>) {
    match w.get(key) {
        None => problems.push(format!("workload.{key}: missing")),
        Some(v) => {
            if let Err(e) = serde_json::from_value::<T>(v.clone()) {
                problems.push(format!("workload.{key}: {e}"));
            }
        }
    }
}

fn load_placement(path: &Path, shape: Option<&ClusterShape>, problems: &mut Vec<String>) -> Option<Placement> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            problems.push(format!("placement.path: {}: {e}", path.display()));
            return None;
        }
    };
    let placement = match Placement::from_json(&text) {
        Ok(p) => p,
        Err(e) => {
            problems.push(format!("placement.path: {}: {e}", path.display()));
            return None;
        }
    };
    let shape = shape?;
    let violations = validate_placement(&placement, shape);
    for v in &violations {
        problems.push(format!("placement: {v}"));
    }
    violations.is_empty().then_some(placement)
}

/// Parses and fully validates a run configuration, applying `overrides` first.
pub fn parse_run_config(text: &str, overrides: &Overrides) -> CliResult<RunConfig> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("config is not valid JSON: {e}")))?;
    let Value::Object(mut doc) = value else {
        return Err(CliError::usage("config must be a JSON object"));
    };
    let mut problems = Vec::new();
    overrides.apply(&mut doc, &mut problems);
    for key in doc.keys().filter(|k| !KEYS.contains(&k.as_str())) {
        problems.push(format!("{key}: unknown key"));
    }
    let shape: Option<ClusterShape> = required(&doc, "shape", &mut problems);
    let strategies: Option<Vec<Strategy>> = required(&doc, "strategies", &mut problems);
    let placement_cfg: PlacementConfig = field(&doc, "placement", &mut problems).unwrap_or(PlacementConfig::Cayley);
    let workload = workload(&doc, &mut problems);
    let cost: Option<CostModel> = defaulted(&doc, "cost", &mut problems);
    let policy: Option<Option<ReplacementPolicy>> = match doc.get("policy") {
        None | Some(Value::Null) => Some(None),
        Some(_) => field(&doc, "policy", &mut problems).map(Some),
    };
    let output_dir: Option<PathBuf> = match doc.get("output_dir") {
        None => Some(PathBuf::from("out")),
        Some(_) => field(&doc, "output_dir", &mut problems),
    };
    let placement = match placement_cfg {
        PlacementConfig::Cayley => Some(PlacementSpec::Cayley),
        PlacementConfig::Random { seed } => Some(PlacementSpec::Random { seed }),
        PlacementConfig::Asymmetric => Some(PlacementSpec::Asymmetric),
        PlacementConfig::File { path } => {
            load_placement(&path, shape.as_ref().filter(|s| s.validate().is_ok()), &mut problems)
                .map(|placement| PlacementSpec::Given { placement })
        }
    };

    let (Some(shape), Some(strategies), Some(placement), Some(workload), Some(cost), Some(policy), Some(output_dir)) =
        (shape, strategies, placement, workload, cost, policy, output_dir)
    else {
        return Err(config_error(problems));
    };
    let config = RunConfig {
        shape,
        strategies,
        placement,
        workload,
        cost,
        policy,
        output_dir,
    };
    problems.extend(config.semantic_problems());
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(config_error(problems))
    }
}

fn config_error(problems: Vec<String>) -> CliError {
    let mut message = format!(
        "invalid config ({} problem{}):",
        problems.len(),
        if problems.len() == 1 { "" } else { "s" }
    );
    for p in problems {
        message.push_str("\n  - ");
        message.push_str(&p);
    }
    CliError::usage(message)
}

impl RunConfig {
    /// The sweep this config describes; trace workloads use a placeholder
    /// exponent list so the shared checks still run.
    pub fn sweep_config(&self) -> SweepConfig {
        let (s_values, seeds, tokens_per_gpu, microbatches) = match &self.workload {
            WorkloadConfig::Zipf {
                s,
                tokens_per_gpu,
                microbatches,
                seeds,
            } => (s.clone(), seeds.clone(), *tokens_per_gpu, *microbatches),
            WorkloadConfig::Trace { .. } => (vec![0.0], vec![0], 0, 1),
        };
        SweepConfig {
            shape: self.shape,
            s_values,
            strategies: self.strategies.clone(),
            seeds,
            tokens_per_gpu,
            microbatches,
            placement: self.placement.clone(),
            cost: self.cost.clone(),
            policy: self.policy.clone(),
        }
    }

    fn semantic_problems(&self) -> Vec<String> {
        let mut problems = self.sweep_config().problems();
        if let WorkloadConfig::Trace { path } = &self.workload {
            if !path.is_file() {
                problems.push(format!("workload.path: {} is not a readable file", path.display()));
            }
        }
        problems
    }
}
