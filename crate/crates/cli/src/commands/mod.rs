pub mod placement;
pub mod solve;
pub mod sweep;
pub mod trace;

use harmony_core::ClusterShape;

use crate::error::CliResult;
use crate::ShapeArgs;

impl ShapeArgs {
    pub fn cluster(&self) -> CliResult<ClusterShape> {
        Ok(ClusterShape::new(
            self.gpus,
            self.experts,
            self.d,
            self.gpus_per_node.unwrap_or(self.gpus),
        )?)
    }
}

pub fn join(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
}
