//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # data
//! n = 10
//! m = 500
//! pi = 2
//! noise = 0.1
//! topology = random
//! avg_degree = 3
//! loss = squared_l2_loss
//! reg = elastic_net:eta1=1,eta2=1
//! reg.4 = l1_reg:eta=0.5
//! ```
//!
//! Every key has a default. `data_dir` replaces synthesis, `sizes = 2,2,3`
//! replaces the uniform `pi`, and `reg.<agent>` overrides `reg` for one agent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::Orientation;
use crate::data::DEFAULT_NOISE_VARIANCE;
use crate::error::{Error, Result};
use crate::functions::FunctionSpec;
use crate::inner::{BcdConfig, StepRule};
use crate::simulator::{RunConfig, Schedule};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synth {
        n: usize,
        m: usize,
        sizes: Vec<usize>,
        noise: f64,
    },
    /// A partition directory written by `synth` or `FeaturePartition::save`.
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Random { avg_degree: f64 },
    Line,
    Ring,
    Star,
    Complete,
    File(PathBuf),
}

impl TopologySpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Topology> {
        match self {
            TopologySpec::Random { avg_degree } => Topology::random_connected(n, *avg_degree, seed),
            TopologySpec::Line => Topology::line(n),
            TopologySpec::Ring => Topology::ring(n),
            TopologySpec::Star => Topology::star(n),
            TopologySpec::Complete => Topology::complete(n),
            TopologySpec::File(path) => {
                let topo = Topology::load(path)?;
                if topo.num_agents() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{} lists {} agents, data has {n}",
                        path.display(),
                        topo.num_agents()
                    )));
                }
                Ok(topo)
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            TopologySpec::Random { .. } => "random",
            TopologySpec::Line => "line",
            TopologySpec::Ring => "ring",
            TopologySpec::Star => "star",
            TopologySpec::Complete => "complete",
            TopologySpec::File(_) => "file",
        }
    }
}

pub const DEFAULT_AVG_DEGREE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: Source,
    pub topology: TopologySpec,
    pub loss: FunctionSpec<f64>,
    pub reg: FunctionSpec<f64>,
    pub reg_overrides: BTreeMap<usize, FunctionSpec<f64>>,
    pub run: RunConfig<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Solve the centralized problem per trial to fill `mu_error` and the summary.
    pub oracle: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: Source::Synth {
                n: 10,
                m: 500,
                sizes: vec![2; 10],
                noise: DEFAULT_NOISE_VARIANCE,
            },
            topology: TopologySpec::Random {
                avg_degree: DEFAULT_AVG_DEGREE,
            },
            loss: FunctionSpec::SquaredL2Loss,
            reg: FunctionSpec::ElasticNet { eta1: 1.0, eta2: 1.0 },
            reg_overrides: BTreeMap::new(),
            run: RunConfig { seed: 1, ..RunConfig::default() },
            trials: 1,
            seed: 1,
            oracle: true,
            out: None,
        }
    }
}

/// Trial `j` draws data from `seed + j` and the graph from `seed + 10⁶ + j`.
pub const TOPOLOGY_SEED_OFFSET: u64 = 1_000_000;

impl ExperimentConfig {
    pub fn data_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    pub fn topology_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(TOPOLOGY_SEED_OFFSET).wrapping_add(trial as u64)
    }

    /// Per-agent regularizers, `reg` unless overridden.
    pub fn regularizers(&self, n: usize) -> Result<Vec<FunctionSpec<f64>>> {
        if let Some(&bad) = self.reg_overrides.keys().find(|&&i| i == 0 || i > n) {
            return Err(Error::UnknownAgent(bad));
        }
        Ok((1..=n)
            .map(|i| *self.reg_overrides.get(&i).unwrap_or(&self.reg))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidSize("trials must be at least 1".into()));
        }
        if !self.loss.is_loss() {
            return Err(Error::Unsupported(format!("{} used as a loss", self.loss)));
        }
        for r in std::iter::once(&self.reg).chain(self.reg_overrides.values()) {
            if r.is_loss() {
                return Err(Error::Unsupported(format!("{r} used as a regularizer")));
            }
        }
        if let Source::Synth { n, sizes, noise, .. } = &self.source {
            if sizes.len() != *n {
                return Err(Error::DimensionMismatch(format!("{} block sizes for n = {n}", sizes.len())));
            }
            if !(*noise >= 0.0) {
                return Err(Error::InvalidSize(format!("noise variance must be non-negative, got {noise}")));
            }
        }
        self.run.validate()
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, Some(line_no), format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
                return Err(Error::parse(source_name, Some(line_no), format!("duplicate key `{key}`")));
            }
        }
        Self::from_entries(entries, source_name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn from_entries(mut entries: BTreeMap<String, (usize, String)>, src: &str) -> Result<Self> {
        let mut take = |key: &str| entries.remove(key);
        fn value<V: FromStr>(src: &str, key: &str, entry: Option<(usize, String)>) -> Result<Option<V>>
        where
            V::Err: std::fmt::Display,
        {
            entry
                .map(|(line, raw)| {
                    raw.parse::<V>()
                        .map_err(|e| Error::parse(src, Some(line), format!("bad value for `{key}`: {e}")))
                })
                .transpose()
        }
        let mut cfg = ExperimentConfig::default();
        let defaults = RunConfig::<f64>::default();
        let bcd_defaults = BcdConfig::<f64>::default();

        let data_dir: Option<PathBuf> = value(src, "data_dir", take("data_dir"))?;
        let n: Option<usize> = value(src, "n", take("n"))?;
        let m: Option<usize> = value(src, "m", take("m"))?;
        let pi: Option<usize> = value(src, "pi", take("pi"))?;
        let sizes_entry = take("sizes");
        let noise: Option<f64> = value(src, "noise", take("noise"))?;
        cfg.source = match data_dir {
            Some(dir) => Source::Dir(dir),
            None => {
                let sizes = match sizes_entry {
                    Some((line, raw)) => raw
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::parse(src, Some(line), format!("bad value for `sizes`: {e}")))?,
                    None => vec![pi.unwrap_or(2); n.unwrap_or(10)],
                };
                Source::Synth {
                    n: n.unwrap_or(sizes.len()),
                    m: m.unwrap_or(500),
                    sizes,
                    noise: noise.unwrap_or(DEFAULT_NOISE_VARIANCE),
                }
            }
        };

        let topo_entry = take("topology");
        let avg_degree: Option<f64> = value(src, "avg_degree", take("avg_degree"))?;
        let topo_file: Option<PathBuf> = value(src, "topology_file", take("topology_file"))?;
        cfg.topology = match topo_entry {
            None => TopologySpec::Random {
                avg_degree: avg_degree.unwrap_or(DEFAULT_AVG_DEGREE),
            },
            Some((line, name)) => match name.as_str() {
                "random" => TopologySpec::Random {
                    avg_degree: avg_degree.unwrap_or(DEFAULT_AVG_DEGREE),
                },
                "line" => TopologySpec::Line,
                "ring" => TopologySpec::Ring,
                "star" => TopologySpec::Star,
                "complete" => TopologySpec::Complete,
                "file" => TopologySpec::File(
                    topo_file.ok_or_else(|| Error::parse(src, Some(line), "topology = file needs `topology_file`"))?,
                ),
                other => return Err(Error::parse(src, Some(line), format!("unknown topology `{other}`"))),
            },
        };

        if let Some(loss) = value(src, "loss", take("loss"))? {
            cfg.loss = loss;
        }
        if let Some(reg) = value(src, "reg", take("reg"))? {
            cfg.reg = reg;
        }

        let bcd = BcdConfig {
            sweeps: value(src, "bcd_sweeps", take("bcd_sweeps"))?.unwrap_or(bcd_defaults.sweeps),
            theta_budget: value(src, "theta_budget", take("theta_budget"))?.unwrap_or(bcd_defaults.theta_budget),
            theta_tolerance: value(src, "theta_tolerance", take("theta_tolerance"))?.unwrap_or(bcd_defaults.theta_tolerance),
            step_rule: match take("step_rule") {
                Some((line, raw)) => StepRule::from_name(&raw)
                    .ok_or_else(|| Error::parse(src, Some(line), format!("unknown step rule `{raw}`")))?,
                None => bcd_defaults.step_rule,
            },
            subgradient_scale: value(src, "subgradient_scale", take("subgradient_scale"))?
                .unwrap_or(bcd_defaults.subgradient_scale),
        };
        let orientation = match take("orientation") {
            Some((_, raw)) if raw == "auto" => None,
            Some((line, raw)) => Some(
                raw.parse::<Orientation>()
                    .map_err(|e| Error::parse(src, Some(line), e.to_string()))?,
            ),
            None => None,
        };
        cfg.run = RunConfig {
            max_rounds: value(src, "max_rounds", take("max_rounds"))?.unwrap_or(defaults.max_rounds),
            rho: value(src, "rho", take("rho"))?.unwrap_or(defaults.rho),
            bcd,
            stop_consensus_tol: value(src, "stop_consensus_tol", take("stop_consensus_tol"))?
                .unwrap_or(defaults.stop_consensus_tol),
            stop_estimate_tol: value(src, "stop_estimate_tol", take("stop_estimate_tol"))?
                .unwrap_or(defaults.stop_estimate_tol),
            seed: 0,
            record_per_agent: value(src, "record_per_agent", take("record_per_agent"))?.unwrap_or(false),
            record_traces: false,
            orientation,
            schedule: Schedule::Sequential,
        };
        cfg.trials = value(src, "trials", take("trials"))?.unwrap_or(1);
        cfg.seed = value(src, "seed", take("seed"))?.unwrap_or(1);
        cfg.run.seed = cfg.seed;
        cfg.oracle = value(src, "oracle", take("oracle"))?.unwrap_or(true);
        cfg.out = value(src, "out", take("out"))?;

        // remaining keys: per-agent overrides or typos
        for (key, (line, raw)) in entries {
            let agent = key
                .strip_prefix("reg.")
                .and_then(|i| i.parse::<usize>().ok())
                .ok_or_else(|| Error::parse(src, Some(line), format!("unknown key `{key}`")))?;
            let spec = raw
                .parse::<FunctionSpec<f64>>()
                .map_err(|e| Error::parse(src, Some(line), e.to_string()))?;
            cfg.reg_overrides.insert(agent, spec);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective parameters in the config syntax; parsing it back yields `self` minus `out`.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").expect("writing to a String");
        match &self.source {
            Source::Synth { n, m, sizes, noise } => {
                kv("n", n);
                kv("m", m);
                kv("sizes", &sizes.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","));
                kv("noise", noise);
            }
            Source::Dir(dir) => kv("data_dir", &dir.display()),
        }
        kv("topology", &self.topology.name());
        match &self.topology {
            TopologySpec::Random { avg_degree } => kv("avg_degree", avg_degree),
            TopologySpec::File(path) => kv("topology_file", &path.display()),
            _ => {}
        }
        kv("loss", &self.loss);
        kv("reg", &self.reg);
        for (i, r) in &self.reg_overrides {
            kv(&format!("reg.{i}"), r);
        }
        kv("max_rounds", &self.run.max_rounds);
        kv("rho", &self.run.rho);
        kv("bcd_sweeps", &self.run.bcd.sweeps);
        kv("theta_budget", &self.run.bcd.theta_budget);
        kv("theta_tolerance", &self.run.bcd.theta_tolerance);
        kv("step_rule", &self.run.bcd.step_rule.name());
        kv("subgradient_scale", &self.run.bcd.subgradient_scale);
        kv("stop_consensus_tol", &self.run.stop_consensus_tol);
        kv("stop_estimate_tol", &self.run.stop_estimate_tol);
        match self.run.orientation {
            Some(o) => kv("orientation", &o),
            None => kv("orientation", &"auto"),
        }
        kv("record_per_agent", &self.run.record_per_agent);
        kv("trials", &self.trials);
        kv("seed", &self.seed);
        kv("oracle", &self.oracle);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_text() {
        let cfg = ExperimentConfig::parse("# nothing here\n\n", "empty").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn full_config() {
        let text = "\
n = 4
m = 30
pi = 3
noise = 0
topology = ring
loss = abs_l1_loss      # robust fit
reg = l2_reg:eta=0.1
reg.2 = l1_reg:eta=0.5
max_rounds = 77
rho = 1.5
bcd_sweeps = 3
step_rule = linearized_dual
orientation = -1
trials = 5
seed = 9
";
        let cfg = ExperimentConfig::parse(text, "cfg").unwrap();
        assert_eq!(cfg.source, Source::Synth { n: 4, m: 30, sizes: vec![3; 4], noise: 0.0 });
        assert_eq!(cfg.topology, TopologySpec::Ring);
        assert_eq!(cfg.loss, FunctionSpec::AbsL1Loss);
        assert_eq!(
            cfg.regularizers(4).unwrap(),
            vec![
                FunctionSpec::SquaredL2Reg { eta: 0.1 },
                FunctionSpec::L1Reg { eta: 0.5 },
                FunctionSpec::SquaredL2Reg { eta: 0.1 },
                FunctionSpec::SquaredL2Reg { eta: 0.1 }
            ]
        );
        assert_eq!(cfg.run.max_rounds, 77);
        assert_eq!(cfg.run.rho, 1.5);
        assert_eq!(cfg.run.bcd.sweeps, 3);
        assert_eq!(cfg.run.bcd.step_rule, StepRule::LinearizedDual);
        assert_eq!(cfg.run.orientation, Some(Orientation::Minus));
        assert_eq!((cfg.trials, cfg.seed), (5, 9));
        assert_eq!(cfg.data_seed(2), 11);
        assert_eq!(cfg.topology_seed(2), 1_000_011);
    }

    #[test]
    fn manifest_round_trips() {
        let text = "n = 3\nsizes = 1,2,3\nm = 12\ntopology = random\navg_degree = 2\nreg = elastic_net:eta1=0.25,eta2=3\nreg.3 = l2_reg:eta=0.001\nrho = 0.1\ntheta_tolerance = 1e-9\ntrials = 2\nseed = 77\n";
        let cfg = ExperimentConfig::parse(text, "cfg").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_manifest(), "manifest").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_manifest(), cfg.to_manifest());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("n = 4\nbogus = 1\n", 2),
            ("n = 4\nm = many\n", 2),
            ("rho = 2\nrho = 3\n", 2),
            ("just words\n", 1),
            ("\n\nreg = l1_reg:eta=-1\n", 3),
            ("topology = torus\n", 1),
            ("step_rule = newton\n", 1),
            ("topology = file\n", 1),
        ];
        for (text, line) in cases {
            match ExperimentConfig::parse(text, "cfg") {
                Err(Error::Parse { line: Some(l), .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn semantic_errors() {
        assert!(ExperimentConfig::parse("n = 3\nsizes = 1,2\n", "cfg").is_err());
        assert!(ExperimentConfig::parse("trials = 0\n", "cfg").is_err());
        assert!(ExperimentConfig::parse("loss = l2_reg:eta=1\n", "cfg").is_err());
        assert!(ExperimentConfig::parse("reg = squared_l2_loss\n", "cfg").is_err());
        assert!(ExperimentConfig::parse("rho = 0\n", "cfg").is_err());
        let cfg = ExperimentConfig::parse("n = 3\nreg.7 = l2_reg:eta=1\n", "cfg").unwrap();
        assert!(matches!(cfg.regularizers(3), Err(Error::UnknownAgent(7))));
    }
}
