#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mrinterp::config::RunConfig;
use mrinterp::trainer::Phase;
use mrinterp_cli::commands;

pub const TINY: &str = r#"
[data]
height = 16
width = 16
coils = 2
train_slices = 6
val_slices = 3
accelerations = [4.0]
center_fraction = 0.15

[model]
cascades = 1
widths = [4, 8]

[train]
pretrain_epochs = 1
finetune_epochs = 1
"#;

pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

pub fn tiny_config() -> RunConfig {
    RunConfig::from_toml(TINY).unwrap()
}

pub struct Fixture {
    pub dataset: PathBuf,
    pub sn: PathBuf,
    pub gan: PathBuf,
}

/// Dataset plus SN and SN-GAN finetunes of a shared pretrained model.
pub fn trained(dir: &Path) -> Fixture {
    let cfg = tiny_config();
    let dataset = dir.join("data.mrds");
    commands::simulate(&cfg, &dataset).unwrap();
    let quiet = &mut |_: &_| {};
    let pre = dir.join("pre.mrin");
    commands::train(&cfg, &dataset, Phase::SnPretrain, None, &pre, quiet).unwrap();
    let sn = dir.join("sn.mrin");
    commands::train(&cfg, &dataset, Phase::SnFinetune, Some(&pre), &sn, quiet).unwrap();
    let gan = dir.join("gan.mrin");
    commands::train(&cfg, &dataset, Phase::SnGanFinetune, Some(&pre), &gan, quiet).unwrap();
    Fixture { dataset, sn, gan }
}
