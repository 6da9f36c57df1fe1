use crate::network::{Branch, Bus, BusKind, Generator, NetworkCase};

pub(crate) fn bus(id: i64, kind: BusKind) -> Bus {
    Bus {
        id,
        kind,
        p_load: 0.0,
        q_load: 0.0,
        gs: 0.0,
        bs: 0.0,
        v_min: 0.9,
        v_max: 1.1,
        v_init: 1.0,
        theta_init: 0.0,
    }
}

pub(crate) fn unit(bus: usize, p_max: f64) -> Generator {
    Generator {
        bus,
        p_g: 0.0,
        q_g: 0.0,
        p_min: 0.0,
        p_max,
        q_min: -1.0,
        q_max: 1.0,
        v_set: 1.0,
        c2: 0.0,
        c1: 1.0,
        c0: 0.0,
        source_row: 0,
    }
}

pub(crate) fn line(from: usize, to: usize, r: f64, x: f64, b: f64) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        b,
        tap: 1.0,
        shift: 0.0,
        i_max: None,
        source_row: 0,
    }
}

/// Slack bus 0 with one unit, PQ bus 1, one line between them.
pub(crate) fn two_bus_network(r: f64, x: f64, b: f64) -> NetworkCase {
    NetworkCase::from_parts(
        100.0,
        vec![bus(1, BusKind::ThetaV), bus(2, BusKind::PQ)],
        vec![line(0, 1, r, x, b)],
        vec![unit(0, 10.0)],
    )
    .unwrap()
}
