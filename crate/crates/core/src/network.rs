//! Internal per-unit network model built from raw case tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::case::{self, RawCaseTables};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    PQ,
    PV,
    ThetaV,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: i64,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub gs: f64,
    pub bs: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Stored voltage magnitude and angle (rad), used for warm starts.
    pub v_init: f64,
    pub theta_init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
    /// Phase shift, rad.
    pub shift: f64,
    /// Current-magnitude limit in p.u.; `None` means unlimited.
    pub i_max: Option<f64>,
    /// Row of the branch table this came from.
    pub source_row: usize,
}

/// One in-service generating unit.
///
/// Units sharing a bus are kept separate for active dispatch and cost; the
/// reactive side is handled per bus (see [`NetworkCase::gen_buses`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub p_g: f64,
    pub q_g: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
    /// Cost `c2·P² + c1·P + c0` in $/h with `P` in MW.
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub source_row: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub slack_bus: usize,
    /// Units attached to each bus.
    pub bus_gens: Vec<Vec<usize>>,
    /// Buses with at least one in-service unit, ascending.
    pub gen_buses: Vec<usize>,
    bus_index: HashMap<i64, usize>,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn kind(&self, bus: usize) -> BusKind {
        self.buses[bus].kind
    }

    pub fn pq_buses(&self) -> Vec<usize> {
        self.buses_of(BusKind::PQ)
    }

    pub fn pv_buses(&self) -> Vec<usize> {
        self.buses_of(BusKind::PV)
    }

    fn buses_of(&self, kind: BusKind) -> Vec<usize> {
        (0..self.n_bus()).filter(|&i| self.buses[i].kind == kind).collect()
    }

    /// Generator buses whose reactive output follows the voltage control (PV and θV).
    pub fn voltage_controlled_gen_buses(&self) -> Vec<usize> {
        self.gen_buses
            .iter()
            .copied()
            .filter(|&b| self.buses[b].kind != BusKind::PQ)
            .collect()
    }

    /// Summed reactive limits `(q_min, q_max)` of all units at `bus`.
    pub fn bus_q_limits(&self, bus: usize) -> (f64, f64) {
        self.bus_gens[bus].iter().fold((0.0, 0.0), |(lo, hi), &g| {
            (lo + self.gens[g].q_min, hi + self.gens[g].q_max)
        })
    }

    /// Monitored branches (those with a current limit).
    pub fn limited_branches(&self) -> Vec<usize> {
        (0..self.branches.len())
            .filter(|&l| self.branches[l].i_max.is_some())
            .collect()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }
}

impl NetworkCase {
    /// Assembles a network from already per-unit parts. Exactly one bus must be
    /// [`BusKind::ThetaV`]; the graph must be connected.
    pub fn from_parts(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        gens: Vec<Generator>,
    ) -> Result<Self> {
        let mut bus_gens = vec![Vec::new(); buses.len()];
        for (g, unit) in gens.iter().enumerate() {
            if unit.bus >= buses.len() {
                return Err(Error::Network(format!("generator {g} on unknown bus")));
            }
            bus_gens[unit.bus].push(g);
        }
        let slack: Vec<usize> = (0..buses.len())
            .filter(|&i| buses[i].kind == BusKind::ThetaV)
            .collect();
        let slack_bus = match slack.as_slice() {
            [] => return Err(Error::Network("no slack (type 3) bus".into())),
            [s] => *s,
            _ => {
                return Err(Error::Network(format!(
                    "{} slack buses, exactly one is supported",
                    slack.len()
                )))
            }
        };
        for (i, bus) in buses.iter().enumerate() {
            if bus.kind != BusKind::PQ && bus_gens[i].is_empty() {
                return Err(Error::Network(format!(
                    "bus {} is voltage controlled but has no in-service generator",
                    bus.id
                )));
            }
        }
        let bus_index = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let gen_buses = (0..buses.len()).filter(|&i| !bus_gens[i].is_empty()).collect();
        let net = NetworkCase {
            base_mva,
            buses,
            branches,
            gens,
            slack_bus,
            bus_gens,
            gen_buses,
            bus_index,
        };
        check_connected(&net)?;
        Ok(net)
    }
}

/// Builds the per-unit network model; out-of-service units and branches are dropped.
pub fn build_network(raw: &RawCaseTables) -> Result<NetworkCase> {
    let base = raw.base_mva;
    let raw_index: HashMap<i64, usize> = raw
        .bus
        .iter()
        .enumerate()
        .map(|(i, row)| (row[case::BUS_I] as i64, i))
        .collect();

    let mut gens = Vec::new();
    let mut bus_gens = vec![Vec::new(); raw.bus.len()];
    for (g, row) in raw.gen.iter().enumerate() {
        if !raw.gen_in_service(g) {
            continue;
        }
        let bus = raw_index[&(row[case::GEN_BUS] as i64)];
        let (c2, c1, c0) = raw.cost_coefficients(g);
        let unit = Generator {
            bus,
            p_g: row[case::PG] / base,
            q_g: row[case::QG] / base,
            p_min: row[case::PMIN] / base,
            p_max: row[case::PMAX] / base,
            q_min: row[case::QMIN] / base,
            q_max: row[case::QMAX] / base,
            v_set: row[case::VG],
            c2,
            c1,
            c0,
            source_row: g,
        };
        if unit.p_min > unit.p_max || unit.q_min > unit.q_max {
            return Err(Error::Network(format!(
                "generator {} has inverted limits",
                g + 1
            )));
        }
        bus_gens[bus].push(gens.len());
        gens.push(unit);
    }

    let mut buses = Vec::with_capacity(raw.bus.len());
    for (i, row) in raw.bus.iter().enumerate() {
        let has_gen = !bus_gens[i].is_empty();
        let kind = match row[case::BUS_TYPE] as i64 {
            3 => BusKind::ThetaV,
            2 if has_gen => BusKind::PV,
            1 | 2 => BusKind::PQ,
            t => {
                return Err(Error::Network(format!(
                    "bus {} has unsupported type {t}",
                    row[case::BUS_I]
                )))
            }
        };
        let v_min = row[case::VMIN];
        let v_max = row[case::VMAX];
        if !(v_min < v_max) {
            return Err(Error::Network(format!(
                "bus {} has v_min >= v_max",
                row[case::BUS_I]
            )));
        }
        // voltage set-point of the attached units overrides the stored magnitude
        let v_init = bus_gens[i]
            .first()
            .filter(|_| kind != BusKind::PQ)
            .map_or(row[case::VM], |&g| gens[g].v_set);
        buses.push(Bus {
            id: row[case::BUS_I] as i64,
            kind,
            p_load: row[case::PD] / base,
            q_load: row[case::QD] / base,
            gs: row[case::GS] / base,
            bs: row[case::BS] / base,
            v_min,
            v_max,
            v_init,
            theta_init: row[case::VA].to_radians(),
        });
    }
    let mut branches = Vec::new();
    for (l, row) in raw.branch.iter().enumerate() {
        if !raw.branch_in_service(l) {
            continue;
        }
        let rate = row[case::RATE_A];
        let tap = row[case::TAP];
        branches.push(Branch {
            from: raw_index[&(row[case::F_BUS] as i64)],
            to: raw_index[&(row[case::T_BUS] as i64)],
            r: row[case::BR_R],
            x: row[case::BR_X],
            b: row[case::BR_B],
            tap: if tap == 0.0 { 1.0 } else { tap },
            shift: row[case::SHIFT].to_radians(),
            i_max: (rate > 0.0).then(|| rate / base),
            source_row: l,
        });
    }

    NetworkCase::from_parts(base, buses, branches, gens)
}

fn check_connected(net: &NetworkCase) -> Result<()> {
    let n = net.n_bus();
    let mut adj = vec![Vec::new(); n];
    for br in &net.branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![net.slack_bus];
    seen[net.slack_bus] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(Error::Network(format!(
            "network is disconnected (bus {} unreachable from slack)",
            net.buses[i].id
        ))),
        None => Ok(()),
    }
}
