pub mod autodiff;
pub mod kg;
pub mod synth;
pub mod kge;
pub mod rank;
pub mod integrate;
pub mod forecast;
