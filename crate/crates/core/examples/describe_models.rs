//! Parameter counts of the three networks at desk and full scale.
//!
//! cargo run --example describe_models

use spleenlen::models::{
    param_count, Architecture, RegressorConfig, UNetConfig, VggConfig, REPORTED_DE_PARAMS, REPORTED_VGG_PARAMS,
};

fn main() {
    let desk = [64, 96];
    let full = [640, 896];
    let rows = [
        ("U-Net, desk", Architecture::UNet(UNetConfig::desk())),
        ("encoder regressor, desk", Architecture::EncoderRegressor(RegressorConfig::new(UNetConfig::desk(), desk))),
        ("VGG-19 regressor, desk /16", Architecture::Vgg(VggConfig::vgg19_narrow(desk, 16))),
        ("U-Net, full width", Architecture::UNet(UNetConfig::paper())),
        ("encoder regressor, 640x896", Architecture::EncoderRegressor(RegressorConfig::new(UNetConfig::paper(), full))),
        ("VGG-19 regressor, 640x896", Architecture::Vgg(VggConfig::vgg19(full))),
    ];
    for (name, arch) in &rows {
        println!("{name:<30} {:>12}", param_count(arch));
    }
    println!("published: encoder regressor {REPORTED_DE_PARAMS}, VGG-19 {REPORTED_VGG_PARAMS}");
}
