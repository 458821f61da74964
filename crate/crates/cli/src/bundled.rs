//! Configs shipped with the binary, one per reproduced figure.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// `(name, JSON text)` of every bundled config.
pub const BUNDLED: &[(&str, &str)] = &[
    ("appendixA_1d", include_str!("../configs/appendixA_1d.json")),
    ("convergencerates_gd_full", include_str!("../configs/convergencerates_gd_full.json")),
    ("convergencerates_gd_n1", include_str!("../configs/convergencerates_gd_n1.json")),
    ("convergencerates_wn_full", include_str!("../configs/convergencerates_wn_full.json")),
    ("convergencerates_wn_n1", include_str!("../configs/convergencerates_wn_n1.json")),
    ("convergenceratesrhoasfunctions_inv_log", include_str!("../configs/convergenceratesrhoasfunctions_inv_log.json")),
    ("convergenceratesrhoasfunctions_log", include_str!("../configs/convergenceratesrhoasfunctions_log.json")),
    ("convergenceratesrhoasfunctions_log_log", include_str!("../configs/convergenceratesrhoasfunctions_log_log.json")),
    ("fig_margin_growth", include_str!("../configs/fig_margin_growth.json")),
    ("gradientdynamics_gd", include_str!("../configs/gradientdynamics_gd.json")),
    ("gradientdynamics_wn", include_str!("../configs/gradientdynamics_wn.json")),
    ("rho_asymptotics_k1", include_str!("../configs/rho_asymptotics_k1.json")),
    ("rho_asymptotics_k2", include_str!("../configs/rho_asymptotics_k2.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::Unknown {
            what: "bundled config",
            name: name.to_string(),
        })?;
    ExperimentConfig::from_json(text, &format!("{name}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_config_parses_and_round_trips() {
        for name in names() {
            let c = bundled(name).unwrap();
            assert_eq!(c.name, name);
            let back = ExperimentConfig::from_json(&c.to_json().unwrap(), name).unwrap();
            assert_eq!(back, c);
        }
    }
}
