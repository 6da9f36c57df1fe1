#![allow(dead_code)]

use ccopf::admittance::{build_admittance, AdmittanceMatrix};
use ccopf::case::{derive_stochastic_case, parse_case, ModificationRecipe, RawCaseTables};
use ccopf::network::{build_network, NetworkCase};
use ccopf::uncertainty::{parse_uncertainty, UncertaintyModel, UncertaintySpecFile};

pub fn data(name: &str) -> String {
    let path = format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn raw(case: &str) -> RawCaseTables {
    parse_case(&data(case)).unwrap()
}

pub struct Fixture {
    pub net: NetworkCase,
    pub y: AdmittanceMatrix,
    pub spec: UncertaintySpecFile,
    pub model: UncertaintyModel,
}

fn fixture(case: &str, recipe: &str, unc: &str) -> Fixture {
    let recipe = ModificationRecipe::from_json(&data(recipe)).unwrap();
    let net = build_network(&derive_stochastic_case(&raw(case), &recipe)).unwrap();
    let y = build_admittance(&net).unwrap();
    let spec = parse_uncertainty(&data(unc)).unwrap();
    let model = UncertaintyModel::resolve(&spec, &net).unwrap();
    Fixture { net, y, spec, model }
}

/// Modified RTS96 one-area case with 17 uncertain loads.
pub fn rts96() -> Fixture {
    fixture("case24_ieee_rts.m", "rts96_recipe.json", "rts96_uncertainty.json")
}

/// Modified 118-bus case with 99 uncertain loads in three zones.
pub fn case118() -> Fixture {
    fixture("case118.m", "case118_recipe.json", "case118_uncertainty.json")
}
