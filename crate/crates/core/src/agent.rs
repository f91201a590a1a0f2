//! Per-agent protocol state for the outer dual-consensus ADMM loop.
//!
//! One round `k` at agent `i` is:
//!
//! 1. `c_i = v_i − ρ|V_i|μ_i − ρ Σ_{j∈V_i} μ_j` from round-`(k−1)` values,
//! 2. BCD on `(θ_i, β_i)` warm-started at `(θ_i, 2ρ̄_i μ_i)`,
//! 3. `μ_i = β_i / (2ρ̄_i)`,
//! 4. exchange `μ_i` with the neighbors,
//! 5. `v_i += ρ Σ_{j∈V_i} (μ_i − μ_j)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::functions::FunctionSpec;
use crate::inner::{bcd_solve, BcdConfig, BcdOutcome, BcdState, LocalBlock};
use crate::scalar::Real;
use crate::topology::Topology;

/// Sign relating the BCD variable `θ_i` to the primal estimate `x̂_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Plus,
    Minus,
}

impl Orientation {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Orientation::Plus => T::one(),
            Orientation::Minus => -T::one(),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Plus => "+1",
            Orientation::Minus => "-1",
        })
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "+1" | "plus" => Ok(Orientation::Plus),
            "-1" | "minus" => Ok(Orientation::Minus),
            other => Err(Error::parse("orientation", None, format!("expected +1 or -1, found `{other}`"))),
        }
    }
}

/// `μ` broadcast by `sender` at the end of round `round`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuMessage<T> {
    pub sender: usize,
    pub round: u64,
    pub payload: Array1<T>,
}

impl<T: Real> MuMessage<T> {
    /// Little-endian record: round (u64), sender (u32), then `M` f64 values.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.payload.len());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.sender as u32).to_le_bytes());
        for x in &self.payload {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    /// Reads one record with payload length `m`; `Ok(None)` at a clean end of stream.
    pub fn read_from(r: &mut impl Read, m: usize) -> std::io::Result<Option<Self>> {
        let mut head = [0u8; 12];
        match r.read_exact(&mut head[..1]) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        r.read_exact(&mut head[1..])?;
        let round = u64::from_le_bytes(head[..8].try_into().expect("8 bytes"));
        let sender = u32::from_le_bytes(head[8..].try_into().expect("4 bytes")) as usize;
        let mut payload = Array1::zeros(m);
        let mut buf = [0u8; 8];
        for x in payload.iter_mut() {
            r.read_exact(&mut buf)?;
            *x = T::lit(f64::from_le_bytes(buf));
        }
        Ok(Some(Self { sender, round, payload }))
    }
}

#[derive(Debug, Clone)]
pub struct AgentState<T> {
    id: usize,
    degree: usize,
    rho_bar: T,
    mu: Array1<T>,
    v: Array1<T>,
    c: Array1<T>,
    bcd: BcdState<T>,
    /// Latest `μ_j` per neighbor, tagged with the round it belongs to.
    neighbor_mu: BTreeMap<usize, (u64, Array1<T>)>,
    /// Completed rounds.
    round: u64,
    /// Round whose `c` is currently stored.
    c_round: Option<u64>,
    /// Whether `v` already absorbed the current round's exchange.
    dual_done: bool,
}

impl<T: Real> AgentState<T> {
    /// Fresh agent with `μ = v = 0`, neighbors known to start at zero.
    pub fn new(id: usize, topology: &Topology, rho: T, samples: usize, features: usize) -> Result<Self> {
        let neighbors = topology.neighbors(id)?;
        if neighbors.is_empty() {
            return Err(Error::InvalidTopology(format!(
                "agent {id} has no neighbors, so ρ̄ = ρ|V_i| vanishes"
            )));
        }
        Ok(Self {
            id,
            degree: neighbors.len(),
            rho_bar: rho * T::from_count(neighbors.len()),
            mu: Array1::zeros(samples),
            v: Array1::zeros(samples),
            c: Array1::zeros(samples),
            bcd: BcdState::zeros(features, samples),
            neighbor_mu: neighbors.iter().map(|&j| (j, (0, Array1::zeros(samples)))).collect(),
            round: 0,
            c_round: None,
            dual_done: true,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `ρ̄_i = ρ|V_i|`.
    pub fn rho_bar(&self) -> T {
        self.rho_bar
    }

    pub fn mu(&self) -> ArrayView1<'_, T> {
        self.mu.view()
    }

    pub fn v(&self) -> ArrayView1<'_, T> {
        self.v.view()
    }

    pub fn c(&self) -> ArrayView1<'_, T> {
        self.c.view()
    }

    pub fn bcd(&self) -> &BcdState<T> {
        &self.bcd
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn neighbor_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbor_mu.keys().copied()
    }

    /// Overwrites the protocol variables, e.g. to replay a logged round.
    pub fn set_state(&mut self, mu: Array1<T>, v: Array1<T>, bcd: BcdState<T>) {
        self.mu = mu;
        self.v = v;
        self.bcd = bcd;
    }

    pub fn message(&self) -> MuMessage<T> {
        MuMessage {
            sender: self.id,
            round: self.round,
            payload: self.mu.clone(),
        }
    }

    pub fn receive(&mut self, msg: &MuMessage<T>) -> Result<()> {
        let desync = |detail: String| Error::ProtocolDesync { agent: self.id, detail };
        if msg.payload.len() != self.mu.len() {
            return Err(desync(format!(
                "payload of length {} from agent {}, expected {}",
                msg.payload.len(),
                msg.sender,
                self.mu.len()
            )));
        }
        match self.neighbor_mu.get_mut(&msg.sender) {
            Some(slot) => {
                *slot = (msg.round, msg.payload.clone());
                Ok(())
            }
            None => Err(desync(format!("message from non-neighbor {}", msg.sender))),
        }
    }

    fn neighbor_sum(&self, round: u64) -> Result<Array1<T>> {
        let mut sum = Array1::zeros(self.mu.len());
        for (&j, (r, mu_j)) in &self.neighbor_mu {
            if *r != round {
                return Err(Error::ProtocolDesync {
                    agent: self.id,
                    detail: format!("holds μ_{j} from round {r}, needs round {round}"),
                });
            }
            sum += mu_j;
        }
        Ok(sum)
    }

    /// `c_i^{(k−1)} = v_i − ρ|V_i|μ_i − ρ Σ_j μ_j`, all from round `k − 1`.
    pub fn compute_c(&mut self, rho: T) -> Result<ArrayView1<'_, T>> {
        if !self.dual_done {
            return Err(Error::ProtocolDesync {
                agent: self.id,
                detail: "dual step of the previous round has not run".into(),
            });
        }
        let neighbors = self.neighbor_sum(self.round)?;
        self.c = &self.v - &(&self.mu * self.rho_bar) - &(neighbors * rho);
        self.c_round = Some(self.round);
        Ok(self.c.view())
    }

    /// Runs the warm-started BCD and sets `μ_i = β_i/(2ρ̄_i)`; advances the round.
    pub fn primal_step(
        &mut self,
        f: &FunctionSpec<T>,
        r: &FunctionSpec<T>,
        block: &LocalBlock<T>,
        b: ArrayView1<T>,
        num_agents: usize,
        cfg: &BcdConfig<T>,
    ) -> Result<BcdOutcome<T>> {
        if self.c_round != Some(self.round) {
            return Err(Error::ProtocolDesync {
                agent: self.id,
                detail: format!("c not computed for round {}", self.round + 1),
            });
        }
        let two_rho_bar = T::lit(2.0) * self.rho_bar;
        let warm = BcdState {
            theta: self.bcd.theta.clone(),
            beta: &self.mu * two_rho_bar,
        };
        let outcome = bcd_solve(f, r, block, self.c.view(), b, num_agents, self.rho_bar, &warm, cfg);
        self.mu = &outcome.state.beta / two_rho_bar;
        self.bcd = outcome.state.clone();
        self.round += 1;
        self.c_round = None;
        self.dual_done = false;
        Ok(outcome)
    }

    /// `v_i += ρ Σ_j (μ_i − μ_j)` with round-`k` neighbor values.
    pub fn dual_step(&mut self, rho: T) -> Result<ArrayView1<'_, T>> {
        if self.dual_done {
            return Err(Error::ProtocolDesync {
                agent: self.id,
                detail: format!("dual step already applied for round {}", self.round),
            });
        }
        let neighbors = self.neighbor_sum(self.round)?;
        let disagreement = &self.mu * T::from_count(self.degree) - &neighbors;
        self.v = &self.v + &(disagreement * rho);
        self.dual_done = true;
        Ok(self.v.view())
    }

    /// `x̂_i = orientation · θ_i`.
    pub fn recover_estimate(&self, orientation: Orientation) -> Array1<T> {
        &self.bcd.theta * orientation.sign::<T>()
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    fn two_agents(rho: f64) -> (AgentState<f64>, AgentState<f64>) {
        let topo = Topology::line(2).unwrap();
        (
            AgentState::new(1, &topo, rho, 1, 1).unwrap(),
            AgentState::new(2, &topo, rho, 1, 1).unwrap(),
        )
    }

    fn msg(sender: usize, round: u64, payload: Array1<f64>) -> MuMessage<f64> {
        MuMessage { sender, round, payload }
    }

    #[test]
    fn initial_state_and_rho_bar() {
        let topo = Topology::star(4).unwrap();
        let hub = AgentState::<f64>::new(1, &topo, 2.0, 3, 2).unwrap();
        assert_eq!(hub.rho_bar(), 6.0);
        assert_eq!(hub.degree(), 3);
        assert_eq!(hub.mu(), Array1::zeros(3));
        assert_eq!(hub.v(), Array1::zeros(3));
        assert_eq!(hub.neighbor_ids().collect::<Vec<_>>(), vec![2, 3, 4]);
        for i in 1..=4 {
            let a = AgentState::<f64>::new(i, &topo, 2.0, 3, 2).unwrap();
            assert_eq!(a.rho_bar(), 2.0 * topo.degree(i).unwrap() as f64);
        }
    }

    #[test]
    fn isolated_agent_is_rejected() {
        let topo = Topology::from_edges(1, []).unwrap();
        assert!(matches!(AgentState::<f64>::new(1, &topo, 2.0, 3, 1), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn compute_c_examples() {
        let (mut a, _) = two_agents(2.0);
        assert_eq!(a.compute_c(2.0).unwrap(), array![0.0]);

        // μ₁ = 1, μ₂ = 3, v₁ = 0 → c₁ = −2·1·1 − 2·3 = −8
        let (mut a, _) = two_agents(2.0);
        a.set_state(array![1.0], array![0.0], BcdState::zeros(1, 1));
        a.receive(&msg(2, 0, array![3.0])).unwrap();
        assert_eq!(a.compute_c(2.0).unwrap(), array![-8.0]);
    }

    #[test]
    fn compute_c_at_consensus() {
        let topo = Topology::ring(4).unwrap();
        let rho = 1.5;
        let mut a = AgentState::<f64>::new(1, &topo, rho, 2, 1).unwrap();
        let mu_bar = array![0.3, -1.2];
        a.set_state(mu_bar.clone(), Array1::zeros(2), BcdState::zeros(1, 2));
        for j in [2, 4] {
            a.receive(&msg(j, 0, mu_bar.clone())).unwrap();
        }
        let c = a.compute_c(rho).unwrap().to_owned();
        let expected = &mu_bar * (-2.0 * rho * 2.0);
        for (x, y) in c.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn dual_step_example() {
        // ρ = 2, μ₁ = 1, μ₂ = 0 → v₁ = 2, v₂ = −2
        let (mut a, mut b) = two_agents(2.0);
        for agent in [&mut a, &mut b] {
            agent.round = 1;
            agent.dual_done = false;
        }
        a.mu = array![1.0];
        b.mu = array![0.0];
        let (ma, mb) = (a.message(), b.message());
        a.receive(&mb).unwrap();
        b.receive(&ma).unwrap();
        assert_eq!(a.dual_step(2.0).unwrap(), array![2.0]);
        assert_eq!(b.dual_step(2.0).unwrap(), array![-2.0]);
    }

    #[test]
    fn dual_step_without_disagreement_keeps_v() {
        let (mut a, _) = two_agents(2.0);
        a.round = 1;
        a.dual_done = false;
        a.mu = array![0.7];
        a.v = array![0.25];
        a.receive(&msg(2, 1, array![0.7])).unwrap();
        assert_eq!(a.dual_step(2.0).unwrap(), array![0.25]);
    }

    #[test]
    fn protocol_desync_is_detected() {
        let (mut a, _) = two_agents(2.0);
        // stale neighbor value for the dual step
        a.compute_c(2.0).unwrap();
        let block = LocalBlock::new(array![[1.0]].view());
        a.primal_step(&FunctionSpec::SquaredL2Loss, &FunctionSpec::SquaredL2Reg { eta: 1.0 }, &block, array![1.0].view(), 2, &BcdConfig::default())
            .unwrap();
        assert!(matches!(a.dual_step(2.0), Err(Error::ProtocolDesync { .. })));
        // primal step before c
        let (mut b, _) = two_agents(2.0);
        assert!(matches!(
            b.primal_step(&FunctionSpec::SquaredL2Loss, &FunctionSpec::SquaredL2Reg { eta: 1.0 }, &block, array![1.0].view(), 2, &BcdConfig::default()),
            Err(Error::ProtocolDesync { .. })
        ));
        // sender outside the neighborhood, wrong payload length
        assert!(b.receive(&msg(3, 0, array![0.0])).is_err());
        assert!(b.receive(&msg(2, 0, array![0.0, 1.0])).is_err());
    }

    #[test]
    fn primal_step_scaling_identity() {
        // with A = 0 the BCD β equals q·4Nρ̄/(1+4Nρ̄) for q = −c − b/N and μ = β/(2ρ̄)
        let (mut a, _) = two_agents(2.0);
        a.compute_c(2.0).unwrap();
        let block = LocalBlock::new(array![[0.0], [0.0]].view());
        a.mu = array![0.0, 0.0];
        a.v = array![0.0, 0.0];
        a.neighbor_mu.insert(2, (0, array![0.0, 0.0]));
        a.bcd = BcdState::zeros(1, 2);
        a.compute_c(2.0).unwrap();
        let b = array![2.0, -1.0];
        let out = a
            .primal_step(&FunctionSpec::SquaredL2Loss, &FunctionSpec::SquaredL2Reg { eta: 1.0 }, &block, b.view(), 2, &BcdConfig::default())
            .unwrap();
        let rho_bar = a.rho_bar();
        for (mu, beta) in a.mu().iter().zip(out.state.beta.iter()) {
            assert_abs_diff_eq!(*mu, beta / (2.0 * rho_bar), epsilon = 1e-15);
        }
        let factor = 4.0 * 2.0 * rho_bar / (1.0 + 4.0 * 2.0 * rho_bar);
        assert_abs_diff_eq!(out.state.beta[0], -factor, epsilon = 1e-12);
        assert_eq!(a.round(), 1);
    }

    #[test]
    fn recover_estimate_orientation() {
        let (mut a, _) = two_agents(1.0);
        assert_eq!(a.recover_estimate(Orientation::Plus), array![0.0]);
        assert_eq!(a.recover_estimate(Orientation::Minus), array![0.0]);
        a.bcd.theta = array![0.75];
        assert_eq!(a.recover_estimate(Orientation::Plus), array![0.75]);
        assert_eq!(a.recover_estimate(Orientation::Minus), array![-0.75]);
    }

    #[test]
    fn orientation_parsing() {
        assert_eq!("+1".parse::<Orientation>().unwrap(), Orientation::Plus);
        assert_eq!("1".parse::<Orientation>().unwrap(), Orientation::Plus);
        assert_eq!("-1".parse::<Orientation>().unwrap(), Orientation::Minus);
        assert!("0".parse::<Orientation>().is_err());
        assert_eq!(Orientation::Minus.to_string(), "-1");
    }

    #[test]
    fn message_binary_layout() {
        let m = msg(7, 3, array![1.5, -2.0]);
        let bytes = m.encode();
        assert_eq!(bytes.len(), 8 + 4 + 16);
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        assert_eq!(&bytes[8..12], &7u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1.5f64.to_le_bytes());
        let mut cursor = std::io::Cursor::new(bytes);
        let back = MuMessage::<f64>::read_from(&mut cursor, 2).unwrap().unwrap();
        assert_eq!(back, m);
        assert!(MuMessage::<f64>::read_from(&mut cursor, 2).unwrap().is_none());
    }
}
