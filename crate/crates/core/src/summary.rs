//! Parameter counts and a forward FLOP estimate for one reconstruction.

use tensorgrad::Graph;

use crate::bp::CassiSystem;
use crate::cube::{CodedMask, DispersionSpec, Measurement, Plane};
use crate::error::Result;
use crate::io::CsvTable;
use crate::unfold::{init_estimate, unfold_graph, StageInputs, UnfoldModel};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSummary {
    pub total_params: usize,
    pub prox_params: usize,
    /// Scalars per top-level parameter group (`prox`, `prox0`, `unfold`).
    pub groups: Vec<(String, usize)>,
    pub height: usize,
    pub width: usize,
    pub flops: u64,
}

impl ModelSummary {
    pub fn to_table(&self) -> Result<CsvTable> {
        let mut t = CsvTable::new(&["item", "value"]);
        t.push(vec!["params".into(), self.total_params.to_string()])?;
        t.push(vec!["prox_params".into(), self.prox_params.to_string()])?;
        for (g, n) in &self.groups {
            t.push(vec![format!("params.{g}"), n.to_string()])?;
        }
        t.push(vec![
            "scene".into(),
            format!("{}x{}", self.height, self.width),
        ])?;
        t.push(vec!["flops".into(), self.flops.to_string()])?;
        Ok(t)
    }
}

/// Counts parameters and records one `height x width` reconstruction
/// (open mask, zero snapshot) to estimate its FLOPs.
pub fn model_summary(
    model: &UnfoldModel,
    height: usize,
    width: usize,
    spec: DispersionSpec,
) -> Result<ModelSummary> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (name, t) in model.params.iter() {
        let g = name.split('.').next().unwrap_or(name).to_string();
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some((_, n)) => *n += t.numel(),
            None => groups.push((g, t.numel())),
        }
    }
    let sys = CassiSystem::new(CodedMask::ones(height, width), model.bands, spec);
    let y = Measurement::new(
        Plane::zeros(height, spec.frame_width(width, model.bands)),
        width,
        model.bands,
        spec,
    )?;
    let mut g = Graph::<f64>::new();
    let vars = model.params.bind(&mut g)?;
    let inputs = StageInputs::new(&mut g, &sys, &y)?;
    let x0 = g.input(init_estimate(&sys, &y)?.to_hwc::<f64>());
    unfold_graph(&mut g, &vars, &model.config, &inputs, x0)?;
    Ok(ModelSummary {
        total_params: model.params.num_scalars(),
        prox_params: model.prox_param_count(),
        groups,
        height,
        width,
        flops: g.flop_estimate(),
    })
}
