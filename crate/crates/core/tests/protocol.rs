//! Agent-level protocol driven by hand, checked against the simulator.

use ndarray::Array1;
use proptest::prelude::*;

use featadmm::agent::{AgentState, MuMessage, Orientation};
use featadmm::simulator::{run, RunConfig};
use featadmm::{BcdConfig, FeaturePartition, FunctionSpec, LocalBlock, Topology};

type Spec = FunctionSpec<f64>;

struct Network {
    agents: Vec<AgentState<f64>>,
    blocks: Vec<LocalBlock<f64>>,
    fp: FeaturePartition<f64>,
    regs: Vec<Spec>,
}

impl Network {
    fn new(fp: FeaturePartition<f64>, topo: &Topology, rho: f64, regs: Vec<Spec>) -> Self {
        let m = fp.num_samples();
        let agents = (1..=fp.num_agents())
            .map(|i| AgentState::new(i, topo, rho, m, fp.block(i).ncols()).unwrap())
            .collect();
        let blocks = (1..=fp.num_agents()).map(|i| LocalBlock::new(fp.block(i))).collect();
        Self { agents, blocks, fp, regs }
    }

    /// One synchronous round; returns the broadcast messages.
    fn round(&mut self, rho: f64, cfg: &BcdConfig<f64>) -> Vec<MuMessage<f64>> {
        let n = self.agents.len();
        for (i, agent) in self.agents.iter_mut().enumerate() {
            agent.compute_c(rho).unwrap();
            agent
                .primal_step(&Spec::SquaredL2Loss, &self.regs[i], &self.blocks[i], self.fp.response(), n, cfg)
                .unwrap();
        }
        let messages: Vec<_> = self.agents.iter().map(|a| a.message()).collect();
        for agent in &mut self.agents {
            let neighbors: Vec<usize> = agent.neighbor_ids().collect();
            for j in neighbors {
                agent.receive(&messages[j - 1]).unwrap();
            }
        }
        for agent in &mut self.agents {
            agent.dual_step(rho).unwrap();
        }
        messages
    }

    fn v_sum(&self) -> Array1<f64> {
        self.agents.iter().fold(Array1::zeros(self.fp.num_samples()), |acc, a| acc + &a.v())
    }
}

fn instance(seed: u64) -> (FeaturePartition<f64>, Topology, Vec<Spec>) {
    let fp = FeaturePartition::synthesize(5, 15, &[1, 2, 2, 3, 1], 0.1, seed).unwrap();
    let topo = Topology::random_connected(5, 2.4, seed + 1).unwrap();
    let regs = vec![
        Spec::ElasticNet { eta1: 0.5, eta2: 0.5 },
        Spec::SquaredL2Reg { eta: 0.1 },
        Spec::L1Reg { eta: 0.05 },
        Spec::SquaredL2Reg { eta: 0.01 },
        Spec::ElasticNet { eta1: 0.1, eta2: 1.0 },
    ];
    (fp, topo, regs)
}

#[test]
fn hand_driven_rounds_match_the_simulator() {
    let (fp, topo, regs) = instance(31);
    let cfg = RunConfig { max_rounds: 40, orientation: Some(Orientation::Minus), ..RunConfig::default() };
    let hist = run(&fp, &topo, &Spec::SquaredL2Loss, &regs, &cfg, None).unwrap();
    let mut net = Network::new(fp, &topo, cfg.rho, regs);
    for _ in 0..40 {
        net.round(cfg.rho, &cfg.bcd);
    }
    for (i, agent) in net.agents.iter().enumerate() {
        assert_eq!(agent.mu().to_owned(), hist.final_mu[i]);
        assert_eq!(agent.recover_estimate(Orientation::Minus), hist.final_estimates[i]);
        assert_eq!(agent.round(), 40);
    }
}

#[test]
fn replaying_a_round_is_bit_exact() {
    let (fp, topo, regs) = instance(32);
    let rho = 2.0;
    let cfg = BcdConfig::default();
    let mut net = Network::new(fp, &topo, rho, regs);
    for _ in 0..15 {
        net.round(rho, &cfg);
    }
    let snapshot = net.agents.clone();
    let first = net.round(rho, &cfg);
    let after_first = net.agents.clone();
    net.agents = snapshot;
    let second = net.round(rho, &cfg);
    assert_eq!(first, second);
    for (a, b) in net.agents.iter().zip(&after_first) {
        assert_eq!(a.mu(), b.mu());
        assert_eq!(a.v(), b.v());
        assert_eq!(a.bcd(), b.bcd());
    }
}

#[test]
fn message_log_round_trips() {
    let (fp, topo, regs) = instance(33);
    let m = fp.num_samples();
    let mut net = Network::new(fp, &topo, 2.0, regs);
    let mut log = Vec::new();
    let mut sent = Vec::new();
    for _ in 0..3 {
        for msg in net.round(2.0, &BcdConfig::default()) {
            msg.write_to(&mut log).unwrap();
            sent.push(msg);
        }
    }
    assert_eq!(log.len(), sent.len() * (12 + 8 * m));
    let mut cursor = std::io::Cursor::new(log);
    let mut read = Vec::new();
    while let Some(msg) = MuMessage::<f64>::read_from(&mut cursor, m).unwrap() {
        read.push(msg);
    }
    assert_eq!(read, sent);
    assert_eq!(read[0].round, 1);
    assert_eq!(read.last().unwrap().round, 3);
}

#[test]
fn rho_bar_follows_the_degree() {
    let (fp, topo, regs) = instance(34);
    let net = Network::new(fp, &topo, 1.25, regs);
    for agent in &net.agents {
        assert_eq!(agent.rho_bar(), 1.25 * topo.degree(agent.id()).unwrap() as f64);
        assert_eq!(agent.degree(), topo.neighbors(agent.id()).unwrap().len());
    }
}

#[test]
fn stale_neighbor_values_are_rejected() {
    let (fp, topo, regs) = instance(35);
    let mut net = Network::new(fp, &topo, 2.0, regs);
    net.round(2.0, &BcdConfig::default());
    // agent 1 advances alone: its neighbors never sent round-2 values
    let a = &mut net.agents[0];
    a.compute_c(2.0).unwrap();
    a.primal_step(&Spec::SquaredL2Loss, &net.regs[0], &net.blocks[0], net.fp.response(), 5, &BcdConfig::default())
        .unwrap();
    assert!(a.dual_step(2.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dual_variables_sum_to_zero(seed in 0u64..10_000, rho in 0.2f64..5.0, rounds in 1usize..25) {
        let (fp, topo, regs) = instance(seed);
        let mut net = Network::new(fp, &topo, rho, regs);
        for _ in 0..rounds {
            net.round(rho, &BcdConfig::default());
            let vmax = net.agents.iter().map(|a| a.v().dot(&a.v()).sqrt()).fold(0.0, f64::max);
            let sum = net.v_sum();
            prop_assert!(sum.dot(&sum).sqrt() <= 1e-9 * (5.0 * vmax).max(1.0));
        }
    }
}
