//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use tokio_tungstenite::tungstenite::Message;

use tunerlab_core::control::{Pace, Server, ServerMessage};
use tunerlab_core::netsim::{FlowConfig, LinkConfig, Simulator};
use tunerlab_core::predictor::{predict_trace, PredictorModel};
use tunerlab_core::scenarios::{
    beta_sweep, fairness, oversubscribed, run_scenario, sweep_medians, takeover, transfer,
    yielding, ExperimentResult, SWEEP_BETAS,
};
use tunerlab_core::time::SimTime;
use tunerlab_core::{CubicParams, CubicState};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const LINK_BPS: f64 = 12e6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mbps(bps: f64) -> String {
    format!("{:.2}", bps / 1e6)
}

fn cubic_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xc0b1c);
    let mut worst_start = 0.0f64;
    let mut worst_plateau = 0.0f64;
    for _ in 0..1000 {
        let last_max = rng.random_range(2.0..20_000.0);
        let cwnd = rng.random_range(1.0..last_max);
        let c = rng.random_range(0.01..4.0);
        let params = CubicParams::default().with_c_scale(c).unwrap();
        let mut state = CubicState::new(10.0).unwrap();
        state.last_max = last_max;
        state.cwnd = cwnd;
        state.epoch_begin(&params, 0.0);
        let k = ((last_max - cwnd) / c).cbrt();
        let at_zero = state.cubic_target(&params, 0.0);
        let at_k = state.cubic_target(&params, k);
        worst_start = worst_start.max((at_zero - cwnd).abs() / cwnd);
        worst_plateau = worst_plateau.max((at_k - last_max).abs());
    }
    let elapsed = started.elapsed();
    outcome(
        worst_start <= 1e-6 && worst_plateau <= 1e-9 && elapsed < Duration::from_secs(1),
        format!(
            "max rel err at t=0 {worst_start:.2e}, max abs err at t=K {worst_plateau:.2e}, {elapsed:.2?}"
        ),
    )
}

fn loss_rules() -> Outcome {
    let beta = 717.0 / 1024.0;
    let lost = |alpha_q: i64, beta_q: i64, fc: bool, prior_max: f64| {
        let params = CubicParams::decode(alpha_q, beta_q, fc, false).unwrap();
        let mut s = CubicState::new(10.0).unwrap();
        s.cwnd = 100.0;
        s.last_max = prior_max;
        s.on_loss(&params);
        (s.cwnd, s.last_max)
    };
    let cut = lost(512, 717, false, 0.0);
    let fast = lost(512, 717, true, 120.0);
    let neutral = lost(512, 1024, false, 0.0);
    let doubled = lost(1024, 717, false, 0.0);
    let quantum = 1.0 / 2048.0;
    let checks = [
        cut == (100.0 * beta, 100.0) && ((100.0 - cut.0) / 100.0 - 0.30).abs() <= quantum,
        fast == (100.0 * beta, 100.0 * (1.0 + beta) / 2.0)
            && (fast.1 / 100.0 - 0.85).abs() <= quantum,
        neutral == (100.0, 100.0),
        doubled == (100.0 * beta, 200.0),
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "cut {:.4} -> cwnd {:.4}; fast convergence last_max {:.4}; beta 1 cwnd {}; alpha 2 last_max {}",
            1.0 - cut.0 / 100.0,
            cut.0,
            fast.1,
            neutral.0,
            doubled.1
        ),
    )
}

fn final_window(r: &ExperimentResult, secs: f64) -> (f64, f64) {
    let end = r.scenario.duration_s;
    (end - secs, end)
}

fn figure3() -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let r = run_scenario(&takeover(seed)).unwrap();
        let (from, to) = final_window(&r, 40.0);
        let a = r.mean_goodput(1, from, to).unwrap();
        let b = r.mean_goodput(2, from, to).unwrap();
        pass &= b >= 8.0 * a && a < 0.10 * LINK_BPS;
        parts.push(format!("A {} B {}", mbps(a), mbps(b)));
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!("Mbps per seed: {}; {elapsed:.2?}", parts.join(", ")),
    )
}

fn figure5() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let r = run_scenario(&yielding(seed)).unwrap();
        let (from, to) = final_window(&r, 40.0);
        let a = r.mean_goodput(1, from, to).unwrap();
        let b = r.mean_goodput(2, from, to).unwrap();
        if a > b {
            wins += 1;
        }
        parts.push(format!("A {} B {}", mbps(a), mbps(b)));
    }
    outcome(
        wins >= 4,
        format!(
            "default flow ahead in {wins}/5 seeds; Mbps: {}",
            parts.join(", ")
        ),
    )
}

fn figure6() -> Outcome {
    let mut binding = true;
    let mut loose = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let r = run_scenario(&oversubscribed(seed)).unwrap();
        let (from, to) = final_window(&r, 40.0);
        let offered = r.offered_rate(from, to).unwrap();
        let a = r.mean_goodput(1, from, to).unwrap();
        let b = r.mean_goodput(2, from, to).unwrap();
        let drops: Vec<u64> = r
            .drop_series()
            .into_iter()
            .filter(|&(t, _)| t as f64 >= from * 1000.0 && t % 1000 == 0)
            .map(|(_, d)| d)
            .collect();
        let growing = drops.len() > 1 && drops.windows(2).all(|w| w[1] > w[0]);
        binding &= offered > 1.2 * LINK_BPS && growing && b > 0.0 && b < a;
        loose &= (1e6..=7e6).contains(&b);
        parts.push(format!(
            "offered {} A {} B {}{}",
            mbps(offered),
            mbps(a),
            mbps(b),
            if growing { "" } else { " drops stalled" }
        ));
    }
    outcome(
        binding && loose,
        format!(
            "oversubscription {}, second flow in [1, 7] Mbps {}; Mbps: {}",
            if binding { "holds" } else { "FAILS" },
            if loose { "holds" } else { "FAILS" },
            parts.join(", ")
        ),
    )
}

fn fairness_clause() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let r = run_scenario(&fairness(seed)).unwrap();
        let jain = r.summary().metrics.jain_final_half.unwrap();
        pass &= jain >= 0.95;
        parts.push(format!("{jain:.4}"));
    }
    outcome(pass, format!("Jain over final 60 s: {}", parts.join(", ")))
}

fn figure7() -> Outcome {
    let started = Instant::now();
    let rows = beta_sweep(&transfer(717, 1), &SWEEP_BETAS, 20).unwrap();
    let elapsed = started.elapsed();
    let medians = sweep_medians(&rows);
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let fastest = rows
        .iter()
        .map(|r| r.transfer_s)
        .fold(f64::INFINITY, f64::min);
    let floor = 8e6 / LINK_BPS;
    outcome(
        rows.len() == 100 && decreasing && fastest > floor && elapsed < Duration::from_secs(60),
        format!(
            "medians {}; fastest sample {fastest:.3} s vs floor {floor:.3} s; {elapsed:.2?}",
            medians
                .iter()
                .map(|(b, m)| format!("{b}:{m:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

/// Mean steady-state epoch length and peak window of a single greedy flow,
/// measured from loss events over the last two thirds of the run.
fn measured_epochs(params: CubicParams) -> (f64, f64) {
    let mut sim = Simulator::new(LinkConfig::reference(1)).unwrap();
    sim.add_flow(FlowConfig {
        params,
        ..FlowConfig::default()
    })
    .unwrap();
    let step = SimTime::from_millis(5);
    let end = SimTime::from_secs_f64(120.0);
    let (mut losses, mut peaks) = (Vec::new(), Vec::new());
    let (mut seen, mut peak) = (0, 0.0f64);
    let mut t = SimTime::ZERO;
    while t < end {
        t = t + step;
        sim.run(t).unwrap();
        sim.drain_telemetry();
        let sender = &sim.flows()[0].sender;
        if sender.counters.loss_events != seen {
            seen = sender.counters.loss_events;
            losses.push(t.as_secs_f64());
            peaks.push(peak);
            peak = 0.0;
        }
        peak = peak.max(sender.cc.cwnd);
    }
    let skip = losses.len() / 3;
    let gaps: Vec<f64> = losses[skip..].windows(2).map(|w| w[1] - w[0]).collect();
    let tops = &peaks[skip + 1..];
    (
        gaps.iter().sum::<f64>() / gaps.len() as f64,
        tops.iter().sum::<f64>() / tops.len() as f64,
    )
}

fn predictor_agreement() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha_q, beta_q) in [(512, 717), (512, 512), (768, 717)] {
        let params = CubicParams::decode(alpha_q, beta_q, false, false).unwrap();
        let (period, peak) = measured_epochs(params);
        let model = PredictorModel::new(params, LinkConfig::reference(1), 120.0);
        let p = predict_trace(&model);
        let want_period = p.meta.period_s.unwrap();
        let want_peak = p.series.iter().map(|s| s.1).fold(0.0, f64::max);
        let dp = (period - want_period).abs() / want_period;
        let dw = (peak - want_peak).abs() / want_peak;
        pass &= dp <= 0.15 && dw <= 0.10;
        parts.push(format!(
            "({:.1},{:.2}) period {period:.3}/{want_period:.3} s ({:.1}%) peak {peak:.1}/{want_peak:.1} ({:.1}%)",
            params.alpha(),
            params.beta(),
            dp * 100.0,
            dw * 100.0
        ));
    }
    outcome(pass, parts.join("; "))
}

fn determinism() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for scenario in [oversubscribed(42), transfer(512, 42), fairness(42)] {
        let csv = |s| {
            let mut out = Vec::new();
            run_scenario(s).unwrap().write_csv(&mut out).unwrap();
            out
        };
        let (a, b) = (csv(&scenario), csv(&scenario));
        pass &= a == b;
        parts.push(format!("{} bytes", a.len()));
    }
    outcome(pass, format!("byte-identical reruns: {}", parts.join(", ")))
}

async fn live_fuzz() -> Outcome {
    let mut scenario = takeover(11);
    scenario.duration_s = 60.0;
    scenario.flows[1].start_s = 10.0;
    let server = Server::bind(scenario, "127.0.0.1:0", Pace::Realtime)
        .await
        .unwrap();
    let url = format!("ws://{}", server.local_addr());
    let service = tokio::spawn(server.run());
    let (ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();
    let (mut tx, mut rx) = ws.split();

    // Collect frames on one task; send on this one.
    let reader = tokio::spawn(async move {
        let mut frames = Vec::new();
        while let Some(Ok(msg)) = rx.next().await {
            if let Message::Text(text) = msg {
                frames.push(serde_json::from_str::<ServerMessage>(text.as_str()).unwrap());
            }
        }
        frames
    });

    let started = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xf022);
    let names = [
        "alpha",
        "beta",
        "fast_convergence",
        "tcp_friendliness",
        "rto_min_ms",
        "initcwnd",
    ];
    for i in 0..100u64 {
        // Spread the storm over the first 45 s.
        let due = Duration::from_millis(i * 450);
        tokio::time::sleep_until(tokio::time::Instant::from_std(started + due)).await;
        let name = names[rng.random_range(0..names.len())];
        let value: i64 = match name {
            "alpha" | "beta" => rng.random_range(1..=1024),
            "fast_convergence" | "tcp_friendliness" => rng.random_range(0..=1),
            "rto_min_ms" => rng.random_range(50..=1000),
            _ => rng.random_range(1..=100),
        };
        let scope = match rng.random_range(0..3) {
            0 => "global".to_owned(),
            n => format!("flow:{n}"),
        };
        let frame =
            serde_json::json!({"type": "set_param", "scope": scope, "name": name, "value": value});
        tx.send(Message::text(frame.to_string())).await.unwrap();
    }
    tokio::time::sleep_until(tokio::time::Instant::from_std(
        started + Duration::from_secs(46),
    ))
    .await;
    let last =
        serde_json::json!({"type": "set_param", "scope": "global", "name": "beta", "value": 1024});
    tx.send(Message::text(last.to_string())).await.unwrap();
    tokio::time::sleep_until(tokio::time::Instant::from_std(
        started + Duration::from_secs(61),
    ))
    .await;
    tx.send(Message::text(r#"{"type":"stop"}"#)).await.unwrap();

    let report = service.await.unwrap().unwrap();
    let frames = reader.await.unwrap();
    let acks: Vec<u64> = frames
        .iter()
        .filter_map(|f| match f {
            ServerMessage::Ack { applied_at_ms, .. } => Some(*applied_at_ms),
            _ => None,
        })
        .collect();
    let errors = frames
        .iter()
        .filter(|f| matches!(f, ServerMessage::Error { .. }))
        .count();
    let freeze_at = acks.get(100).copied().unwrap_or(u64::MAX);

    // After the final update, cwnd may not fall across a tick without a
    // retransmission, and across any tick only by a retransmission timeout.
    let mut reductions = 0;
    let mut checked = 0;
    let mut unexplained = 0;
    let after: Vec<_> = report
        .telemetry
        .iter()
        .filter(|s| s.t_ms > freeze_at)
        .collect();
    for pair in after.windows(2) {
        for f1 in &pair[1].flows {
            let Some(f0) = pair[0].flows.iter().find(|f| f.flow_id == f1.flow_id) else {
                continue;
            };
            if !f0.started {
                continue;
            }
            let fell = f1.cwnd_segments < f0.cwnd_segments;
            if f1.retransmit_count == f0.retransmit_count {
                checked += 1;
                reductions += usize::from(fell);
            }
            if fell && f1.rto_events == f0.rto_events {
                unexplained += 1;
            }
        }
    }
    let ticks = report.telemetry.len();
    let ordered = acks.windows(2).all(|w| w[0] <= w[1]);
    let pass = acks.len() == 102
        && errors == 0
        && ordered
        && report.invariant_violations.is_empty()
        && report.sim_error.is_none()
        && (295..=307).contains(&ticks)
        && checked > 0
        && reductions == 0
        && unexplained == 0;
    outcome(
        pass,
        format!(
            "{} acks, {errors} errors, {} invariant violations, {ticks} ticks, final update at {freeze_at} ms, {checked} loss-free intervals with {reductions} reductions, {unexplained} reductions without a timeout, {:.1?} wall",
            acks.len(),
            report.invariant_violations.len(),
            started.elapsed()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("cubic math oracle", Box::new(cubic_oracle)),
        ("loss-rule table", Box::new(loss_rules)),
        ("starvation by a beta = 1 flow", Box::new(figure3)),
        ("beta = 0.25 flow yields", Box::new(figure5)),
        ("two beta = 1 flows oversubscribe", Box::new(figure6)),
        ("equal parameters are fair", Box::new(fairness_clause)),
        ("transfer time falls with beta", Box::new(figure7)),
        (
            "predictor agrees with simulator",
            Box::new(predictor_agreement),
        ),
        ("determinism", Box::new(determinism)),
        (
            "live update storm",
            Box::new(|| {
                tokio::runtime::Runtime::new()
                    .unwrap()
                    .block_on(live_fuzz())
            }),
        ),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let result = check();
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} criterion {n:>2} {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
