//! The bundled vehicle-trauma model and its three-event scenario.

use crate::dsl::{parse_model, parse_scenario};
use crate::model::{ModelDef, ScenarioDef};
use crate::real::Real;

pub const MODEL_TEXT: &str = include_str!("../data/trauma.model");
pub const SCENARIO_TEXT: &str = include_str!("../data/crash.scenario");

pub fn model<T: Real>() -> ModelDef<T> {
    parse_model(MODEL_TEXT).expect("bundled model parses")
}

pub fn scenario<T: Real>(model: &ModelDef<T>) -> ScenarioDef<T> {
    parse_scenario(SCENARIO_TEXT, model).expect("bundled scenario parses")
}

/// Most probable initial value of every attribute.
pub fn default_values<T: Real>(model: &ModelDef<T>) -> Vec<usize> {
    let priors = model.effective_priors(&[]).expect("bundled priors are valid");
    priors
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &q)| if q > best.1 { (i, q) } else { best })
                .0
        })
        .collect()
}
