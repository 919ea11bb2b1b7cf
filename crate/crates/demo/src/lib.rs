//! Browser demo: each operation is a plain function returning a serializable
//! view, wrapped for JavaScript as a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use harmony_core::placement::{cayley_symmetric, identical_placement, placement_density, CayleyShape};
use harmony_core::simulator::{gen_zipf_workload, run_skew_sweep, run_strategy, CostModel, Strategy, SweepConfig};
use harmony_core::{ClusterShape, Result};

/// Largest `p` the page offers; the exact density oracle enumerates GPU subsets.
pub const MAX_P: u32 = 4;

/// Cluster used by the load-balancing views.
pub fn demo_shape() -> ClusterShape {
    ClusterShape::new(8, 32, 2, 8).expect("demo shape is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlacementView {
    pub num_gpus: usize,
    pub num_experts: usize,
    /// GPU pair of every expert.
    pub edges: Vec<[usize; 2]>,
    pub experts_by_gpu: Vec<Vec<usize>>,
    /// Densest GPU subset when expert `e` carries `e + 1` tokens.
    pub densest_subset: Vec<usize>,
    pub density: f64,
    /// Densest-subset bound divided by the mean GPU load.
    pub balance_bound: f64,
}

pub fn placement_view(p: u32, q: u32) -> Result<PlacementView> {
    if p == 0 || p > MAX_P || q > p + 2 {
        return Err(harmony_core::Error::InvalidOption(format!(
            "p must be in 1..={MAX_P} and q at most p + 2, got p = {p}, q = {q}"
        )));
    }
    let shape = CayleyShape { p, q }.cluster(1 << p)?;
    let placement = cayley_symmetric(&shape)?;
    let weights: Vec<f64> = (1..=shape.num_experts).map(|e| e as f64).collect();
    let report = placement_density(&placement, &weights)?;
    let mean = weights.iter().sum::<f64>() / shape.num_gpus as f64;
    Ok(PlacementView {
        num_gpus: shape.num_gpus,
        num_experts: shape.num_experts,
        edges: placement.edp_groups().iter().map(|g| [g[0], g[1]]).collect(),
        experts_by_gpu: placement.experts_by_gpu(),
        densest_subset: report.best_subset,
        density: report.density,
        balance_bound: report.density / mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyLoads {
    pub strategy: String,
    pub gpu_loads: Vec<u64>,
    pub max_gpu_load: u64,
    pub balance_ratio: f64,
}

/// Per-GPU loads of one Zipf micro-batch under each strategy.
pub fn balance_snapshot(s: f64, seed: u64, tokens_per_gpu: u64) -> Result<Vec<StrategyLoads>> {
    let shape = demo_shape();
    let workload = gen_zipf_workload(&shape, s, tokens_per_gpu, 1, seed)?;
    let cayley = cayley_symmetric(&shape)?;
    let identical = identical_placement(&shape)?;
    let cost = CostModel::default();
    [Strategy::VanillaEp, Strategy::MergedEp, Strategy::Harmony]
        .into_iter()
        .map(|strategy| {
            let placement = if strategy.is_harmony() { &cayley } else { &identical };
            let out = run_strategy(&workload, strategy, placement, &shape, &cost, None, seed)?;
            let m = &out.metrics[0];
            Ok(StrategyLoads {
                strategy: strategy.name().to_string(),
                gpu_loads: m.gpu_loads.clone(),
                max_gpu_load: m.max_gpu_load,
                balance_ratio: m.balance_ratio,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewSeries {
    pub strategy: String,
    pub mean_balance_ratio: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewCurve {
    pub s_values: Vec<f64>,
    pub series: Vec<SkewSeries>,
}

/// Mean balance ratio against the Zipf exponent for each strategy.
pub fn skew_curve(s_max: f64, points: usize, microbatches: usize, seed: u64) -> Result<SkewCurve> {
    if !(2..=24).contains(&points) || microbatches == 0 || microbatches > 50 {
        return Err(harmony_core::Error::InvalidOption(format!(
            "points must be in 2..=24 and microbatches in 1..=50, got {points} and {microbatches}"
        )));
    }
    let s_values: Vec<f64> = (0..points).map(|i| s_max * i as f64 / (points - 1) as f64).collect();
    let strategies = vec![Strategy::VanillaEp, Strategy::MergedEp, Strategy::Harmony];
    let config = SweepConfig {
        shape: demo_shape(),
        s_values: s_values.clone(),
        strategies: strategies.clone(),
        seeds: vec![seed],
        tokens_per_gpu: 1024,
        microbatches,
        placement: Default::default(),
        cost: CostModel::default(),
        policy: None,
    };
    let result = run_skew_sweep(&config)?;
    let series = strategies
        .iter()
        .map(|&strategy| SkewSeries {
            strategy: strategy.name().to_string(),
            mean_balance_ratio: result
                .summary
                .iter()
                .filter(|row| row.strategy == strategy)
                .map(|row| row.mean_balance_ratio)
                .collect(),
        })
        .collect();
    Ok(SkewCurve { s_values, series })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsValue> {
    let value = value.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = placementView)]
pub fn placement_view_js(p: u32, q: u32) -> std::result::Result<String, JsValue> {
    to_js(placement_view(p, q))
}

#[wasm_bindgen(js_name = balanceSnapshot)]
pub fn balance_snapshot_js(s: f64, seed: u32, tokens_per_gpu: u32) -> std::result::Result<String, JsValue> {
    to_js(balance_snapshot(s, seed.into(), tokens_per_gpu.into()))
}

#[wasm_bindgen(js_name = skewCurve)]
pub fn skew_curve_js(s_max: f64, points: u32, microbatches: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(skew_curve(s_max, points as usize, microbatches as usize, seed.into()))
}
