//! Built-in experiment families, one run configuration per plotted curve.

use crate::error::{Error, Result};
use crate::functions::FunctionSpec;

use super::config::{ExperimentConfig, Source, TopologySpec};

pub const PRESETS: [&str; 6] = ["elastic-net-pi", "elastic-net-m", "elastic-net-n", "elastic-net-topo", "ridge", "lasso"];

pub const DEFAULT_TRIALS: usize = 100;

/// `(P_i, M)` pairs of the local-feature sweep.
pub const PI_SWEEP: [(usize, usize); 4] = [(2, 800), (10, 1000), (20, 1100), (50, 1500)];
pub const M_SWEEP: [usize; 4] = [100, 200, 500, 1000];
pub const N_SWEEP: [usize; 4] = [5, 10, 15, 20];

/// `(name, N, M, P_i)` shared by the ridge and lasso families.
pub const REGRESSION_SCENARIOS: [(&str, usize, usize, usize); 4] = [
    ("n10_m50", 10, 50, 2),
    ("n10_m200", 10, 200, 2),
    ("n20_m200", 20, 200, 2),
    ("n10_m200_p10", 10, 200, 10),
];

fn synth(n: usize, m: usize, pi: usize) -> Source {
    Source::Synth {
        n,
        m,
        sizes: vec![pi; n],
        noise: crate::data::DEFAULT_NOISE_VARIANCE,
    }
}

fn elastic_net(n: usize, m: usize, pi: usize, topology: TopologySpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        source: synth(n, m, pi),
        topology,
        loss: FunctionSpec::SquaredL2Loss,
        reg: FunctionSpec::ElasticNet { eta1: 1.0, eta2: 1.0 },
        trials: DEFAULT_TRIALS,
        ..ExperimentConfig::default()
    };
    cfg.run.rho = 2.0;
    cfg.run.bcd.sweeps = 2;
    cfg.run.max_rounds = 2000;
    cfg
}

fn regression(n: usize, m: usize, pi: usize, reg: FunctionSpec<f64>, max_rounds: usize) -> ExperimentConfig {
    let mut cfg = elastic_net(n, m, pi, random());
    cfg.reg = reg;
    cfg.run.max_rounds = max_rounds;
    cfg
}

fn random() -> TopologySpec {
    TopologySpec::Random {
        avg_degree: super::config::DEFAULT_AVG_DEGREE,
    }
}

/// Curves of a preset as `(curve name, config)`.
pub fn preset(name: &str) -> Result<Vec<(String, ExperimentConfig)>> {
    let curves = match name {
        "elastic-net-pi" => PI_SWEEP
            .iter()
            .map(|&(pi, m)| (format!("pi{pi}_m{m}"), elastic_net(10, m, pi, random())))
            .collect(),
        "elastic-net-m" => M_SWEEP
            .iter()
            .map(|&m| (format!("m{m}"), elastic_net(10, m, 2, random())))
            .collect(),
        "elastic-net-n" => N_SWEEP
            .iter()
            .map(|&n| (format!("n{n}"), elastic_net(n, 500, 2, random())))
            .collect(),
        "elastic-net-topo" => [
            ("line", TopologySpec::Line),
            ("ring", TopologySpec::Ring),
            ("star", TopologySpec::Star),
            ("complete", TopologySpec::Complete),
        ]
        .into_iter()
        .map(|(curve, topo)| (curve.to_string(), elastic_net(10, 500, 2, topo)))
        .collect(),
        "ridge" => REGRESSION_SCENARIOS
            .iter()
            .map(|&(curve, n, m, pi)| (curve.to_string(), regression(n, m, pi, FunctionSpec::SquaredL2Reg { eta: 0.001 }, 2000)))
            .collect(),
        "lasso" => REGRESSION_SCENARIOS
            .iter()
            .map(|&(curve, n, m, pi)| (curve.to_string(), regression(n, m, pi, FunctionSpec::L1Reg { eta: 0.001 }, 5000)))
            .collect(),
        other => {
            return Err(Error::Unsupported(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_has_four_valid_curves() {
        for name in PRESETS {
            let curves = preset(name).unwrap();
            assert_eq!(curves.len(), 4, "{name}");
            for (_, cfg) in &curves {
                cfg.validate().unwrap();
                assert_eq!(cfg.run.bcd.sweeps, 2);
                assert_eq!(cfg.run.rho, 2.0);
            }
        }
        assert!(preset("elastic-net-q").is_err());
    }

    #[test]
    fn preset_parameters() {
        let lasso = preset("lasso").unwrap();
        assert!(lasso.iter().all(|(_, c)| c.run.max_rounds == 5000 && c.reg == FunctionSpec::L1Reg { eta: 0.001 }));
        let ridge = preset("ridge").unwrap();
        assert!(ridge.iter().all(|(_, c)| c.run.max_rounds == 2000 && c.reg == FunctionSpec::SquaredL2Reg { eta: 0.001 }));
        assert_eq!(
            ridge[3].1.source,
            Source::Synth { n: 10, m: 200, sizes: vec![10; 10], noise: 0.1 }
        );
        let topo = preset("elastic-net-topo").unwrap();
        assert_eq!(topo[3].1.topology, TopologySpec::Complete);
        assert_eq!(topo[0].1.reg, FunctionSpec::ElasticNet { eta1: 1.0, eta2: 1.0 });
    }
}
