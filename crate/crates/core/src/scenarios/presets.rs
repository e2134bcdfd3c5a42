//! Ready-made experiments on the 12 Mbps / 80 ms / 120000-byte link.

use super::{FlowSpec, LinkSpec, Scenario};

/// Second flows start this long after the first.
pub const STAGGER_S: f64 = 20.0;

/// Beta values swept for transfer times, in q1024 units.
pub const SWEEP_BETAS: [i64; 5] = [256, 512, 717, 921, 1024];

pub const PRESET_NAMES: [&str; 5] = [
    "takeover",
    "yielding",
    "oversubscribed",
    "fairness",
    "transfer",
];

fn reference_link(seed: u64) -> LinkSpec {
    LinkSpec {
        rate_mbps: 12.0,
        rtt_ms: 80.0,
        queue_bytes: 120_000,
        loss_prob: 0.0,
        seed,
    }
}

fn two_flows(seed: u64, a: FlowSpec, b: FlowSpec) -> Scenario {
    Scenario {
        link: reference_link(seed),
        duration_s: 120.0,
        flows: vec![a, b.starting_at(STAGGER_S)],
    }
}

/// Default CUBIC, then an alpha = beta = 1 flow.
pub fn takeover(seed: u64) -> Scenario {
    two_flows(
        seed,
        FlowSpec::default(),
        FlowSpec::default().with_params(512, 1024),
    )
}

/// Default CUBIC, then a beta = 0.25 flow.
pub fn yielding(seed: u64) -> Scenario {
    two_flows(
        seed,
        FlowSpec::default(),
        FlowSpec::default().with_params(512, 256),
    )
}

/// Two alpha = beta = 1 flows.
pub fn oversubscribed(seed: u64) -> Scenario {
    let tuned = FlowSpec::default().with_params(512, 1024);
    two_flows(seed, tuned.clone(), tuned)
}

/// Two default CUBIC flows.
pub fn fairness(seed: u64) -> Scenario {
    two_flows(seed, FlowSpec::default(), FlowSpec::default())
}

/// One 1 MB transfer over a 12 Mbps / 50 ms link with 1% random loss.
pub fn transfer(beta_q1024: i64, seed: u64) -> Scenario {
    Scenario {
        link: LinkSpec {
            rtt_ms: 50.0,
            loss_prob: 0.01,
            ..reference_link(seed)
        },
        duration_s: 60.0,
        flows: vec![FlowSpec {
            bytes_goal: Some(1_000_000),
            ..FlowSpec::default().with_params(512, beta_q1024)
        }],
    }
}

/// Looks a preset up by name.
pub fn by_name(name: &str, seed: u64) -> Option<Scenario> {
    Some(match name {
        "takeover" => takeover(seed),
        "yielding" => yielding(seed),
        "oversubscribed" => oversubscribed(seed),
        "fairness" => fairness(seed),
        "transfer" => transfer(717, seed),
        _ => return None,
    })
}
