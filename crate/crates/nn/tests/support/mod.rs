pub mod layer_checks;
pub mod reference;
