//! Discrete-time gateway experiment.
//!
//! Each step every host is independently active with probability
//! `host_activation_prob`. Active hosts emit `rate` packets, processed host
//! by host in index order. After all arrivals, the gateway serves up to
//! `service_rate` packets.
//!
//! Randomness: one `ChaCha8Rng` per run, seeded with `seed`. Stream 0
//! supplies one activation draw per host per step. Stream 1 supplies one
//! marking draw per arriving packet. Host activity therefore never depends
//! on the gateway, so RED and mRED runs with one seed see identical
//! traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aqm::{Gateway, RedParams};
use crate::error::{Error, Result};
use crate::kernel::{InitMode, KernelSettings};

const TRAFFIC_STREAM: u64 = 0;
const MARKING_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayKind {
    Red,
    Mred,
}

impl GatewayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GatewayKind::Red => "red",
            GatewayKind::Mred => "mred",
        }
    }
}

impl std::fmt::Display for GatewayKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GatewayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(GatewayKind::Red),
            "mred" => Ok(GatewayKind::Mred),
            other => Err(Error::config(
                "gateway",
                format!("expected `red` or `mred`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostSpec {
    /// Packets emitted in each step the host is active.
    pub rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub hosts: Vec<HostSpec>,
    pub steps: u64,
    pub seed: u64,
    pub gateway: GatewayKind,
    pub red_params: RedParams,
    pub n_states: usize,
    pub dt: f64,
    pub substeps: usize,
    pub service_rate: u32,
    pub host_activation_prob: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            hosts: hosts_from_rates(&crate::config::NETWORK1_RATES),
            steps: 10_000,
            seed: 1,
            gateway: GatewayKind::Red,
            red_params: RedParams::default(),
            n_states: 500,
            dt: 0.01,
            substeps: 1,
            service_rate: 10,
            host_activation_prob: 0.5,
        }
    }
}

pub fn hosts_from_rates(rates: &[u32]) -> Vec<HostSpec> {
    rates.iter().map(|&rate| HostSpec { rate }).collect()
}

impl SimConfig {
    /// Largest possible number of arrivals in one step.
    pub fn max_arrivals(&self) -> u64 {
        self.hosts.iter().map(|h| u64::from(h.rate)).sum()
    }

    pub fn kernel_settings(&self) -> KernelSettings {
        KernelSettings {
            n_states: self.n_states,
            dt: self.dt,
            substeps: self.substeps,
            init: InitMode::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hosts.is_empty() {
            return Err(Error::config("hosts", "at least one host required"));
        }
        if let Some(i) = self.hosts.iter().position(|h| h.rate == 0) {
            return Err(Error::config("hosts", format!("host {i} has rate 0")));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.host_activation_prob > 0.0 && self.host_activation_prob <= 1.0) {
            return Err(Error::config("host_activation_prob", "must lie in (0, 1]"));
        }
        self.red_params.marking().validate()?;
        // Only classic RED consumes the queue weight.
        if self.gateway == GatewayKind::Red {
            self.red_params.validate()?;
        }
        self.kernel_settings().validate()
    }

    fn build_gateway(&self) -> Result<Gateway> {
        match self.gateway {
            GatewayKind::Red => Gateway::red(&self.red_params, self.n_states),
            GatewayKind::Mred => Gateway::mred(self.red_params.marking(), self.kernel_settings()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub arrivals: u64,
    /// Drops decided by the AQM.
    pub drops: u64,
    /// Tail drops on a full buffer.
    pub overflow_drops: u64,
    pub queue_len_end: usize,
    pub avg_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub gateway: GatewayKind,
    pub seed: u64,
    pub total_traffic: u64,
    /// AQM and overflow drops together.
    pub total_drops: u64,
    pub overflow_drops: u64,
    pub utilisation: f64,
    pub per_host_drops: Vec<u64>,
    pub records: Vec<StepRecord>,
}

impl SimStats {
    /// `total_drops / total_traffic`, zero when nothing arrived.
    pub fn drop_fraction(&self) -> f64 {
        if self.total_traffic == 0 {
            0.0
        } else {
            self.total_drops as f64 / self.total_traffic as f64
        }
    }
}

/// One independent Bernoulli draw per host, in index order.
pub fn select_active_hosts<R: Rng + ?Sized>(
    hosts: &[HostSpec],
    activation_prob: f64,
    rng: &mut R,
) -> Vec<usize> {
    (0..hosts.len())
        .filter(|_| rng.gen::<f64>() < activation_prob)
        .collect()
}

/// A run in progress.
#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    gateway: Gateway,
    traffic_rng: ChaCha8Rng,
    marking_rng: ChaCha8Rng,
    next_step: u64,
    per_host_drops: Vec<u64>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let gateway = config.build_gateway()?;
        let mut traffic_rng = ChaCha8Rng::seed_from_u64(config.seed);
        traffic_rng.set_stream(TRAFFIC_STREAM);
        let mut marking_rng = ChaCha8Rng::seed_from_u64(config.seed);
        marking_rng.set_stream(MARKING_STREAM);
        Ok(Simulation {
            per_host_drops: vec![0; config.hosts.len()],
            config,
            gateway,
            traffic_rng,
            marking_rng,
            next_step: 0,
        })
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn per_host_drops(&self) -> &[u64] {
        &self.per_host_drops
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let active = select_active_hosts(
            &self.config.hosts,
            self.config.host_activation_prob,
            &mut self.traffic_rng,
        );
        let mut record = StepRecord {
            step: self.next_step,
            arrivals: 0,
            drops: 0,
            overflow_drops: 0,
            queue_len_end: 0,
            avg_end: 0.0,
        };
        for host in active {
            for _ in 0..self.config.hosts[host].rate {
                record.arrivals += 1;
                let u: f64 = self.marking_rng.gen();
                let verdict = self.gateway.on_arrival(u)?;
                if verdict.is_drop() {
                    self.per_host_drops[host] += 1;
                    if verdict.is_mark() {
                        record.drops += 1;
                    } else {
                        record.overflow_drops += 1;
                    }
                }
            }
        }
        self.gateway.service(self.config.service_rate as usize);
        let state = self.gateway.state();
        record.queue_len_end = state.q;
        record.avg_end = state.avg;
        self.next_step += 1;
        Ok(record)
    }
}

/// Runs `config.steps` steps from a fresh gateway.
pub fn run(config: &SimConfig) -> Result<SimStats> {
    let mut sim = Simulation::new(config.clone())?;
    let mut records = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        records.push(sim.step()?);
    }
    let total_traffic: u64 = records.iter().map(|r| r.arrivals).sum();
    let overflow_drops: u64 = records.iter().map(|r| r.overflow_drops).sum();
    let total_drops = records.iter().map(|r| r.drops).sum::<u64>() + overflow_drops;
    let utilisation = if total_traffic == 0 {
        1.0
    } else {
        1.0 - total_drops as f64 / total_traffic as f64
    };
    Ok(SimStats {
        gateway: config.gateway,
        seed: config.seed,
        total_traffic,
        total_drops,
        overflow_drops,
        utilisation,
        per_host_drops: sim.per_host_drops,
        records,
    })
}
