//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail. Pass criterion numbers as arguments to run a subset.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use num::rational::Ratio;
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fairmac_core::experiments::{
    self, classify_regime, derive_seed, gain_percent, mean_se, summarize, SweepSpec, SweepVariable,
};
use fairmac_core::schemes::{
    can_help, feasibility, helper_set, max_direct_rate, max_supported_rate, rate_df, rate_two_hop,
};
use fairmac_core::simulator::{contend, SlotOutcome, Step, TraceRecord, TxKind};
use fairmac_core::{
    slot_probabilities, throughput_bound, ChannelParams, ContentionMode, MacParams, NodeId, RateTable, Regime,
    SchemeKind, SimConfig, Simulator, StopCondition, TargetRate, Topology,
};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

const TAU: f64 = 0.001;
const SIGMA: f64 = 0.002;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rates_for(n: usize, seed: u64, tx_snr: f64) -> RateTable {
    let topo = Topology::generate(n, seed).unwrap();
    RateTable::build(&topo, &ChannelParams::new(tx_snr, 2.0).unwrap()).unwrap()
}

fn simulate(rates: &RateTable, config: SimConfig) -> fairmac_core::MetricsReport {
    let mut sim = Simulator::new(config, rates).unwrap();
    sim.run_to_end().unwrap();
    sim.report()
}

/// Exact value `num / den`, left unreduced.
struct Exact {
    num: BigInt,
    den: BigInt,
}

impl Exact {
    fn from_f64(x: f64) -> Self {
        let r = BigRational::from_float(x).unwrap();
        Exact { num: r.numer().clone(), den: r.denom().clone() }
    }

    fn rel_err(&self, got: f64) -> f64 {
        let e = Ratio::new_raw(self.num.clone(), self.den.clone()).to_f64().unwrap();
        if e == 0.0 {
            got.abs()
        } else {
            ((got - e) / e).abs()
        }
    }
}

fn analytic_exactness() -> Outcome {
    let start = Instant::now();
    let taus = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1];
    let sigmas = [1e-3, 1e-2, 0.1];
    let d = 2.7;
    let d_exact = Exact::from_f64(d);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &tau in &taus {
        let t = Exact::from_f64(tau);
        let q_num = &t.den - &t.num;
        let mut pow_num = BigInt::one();
        let mut pow_den = BigInt::one();
        for n in 1..=64usize {
            // p_s and p_i share the denominator den = t.den^n.
            let n_big = BigInt::from(n);
            let s_num = &n_big * &t.num * &pow_num;
            pow_num *= &q_num;
            pow_den *= &t.den;
            let den = &pow_den;
            let p_s = Exact { num: s_num.clone(), den: den.clone() };
            let p_i = Exact { num: pow_num.clone(), den: den.clone() };
            let p_c = Exact { num: den - &s_num - &pow_num, den: den.clone() };
            let probs = slot_probabilities(&MacParams::new(n, tau, SIGMA).unwrap());
            for (got, exact) in [(probs.p_s, &p_s), (probs.p_i, &p_i), (probs.p_c, &p_c)] {
                worst = worst.max(exact.rel_err(got));
            }
            ensure(p_c.num.is_zero() == (probs.p_c == 0.0), || format!("p_c zero mismatch at n={n} tau={tau}"))?;
            for &sigma in &sigmas {
                let sg = Exact::from_f64(sigma);
                // renewal * den * sg.den
                let renewal = (den - &pow_num) * (&sg.den + &sg.num) + &pow_num * &sg.num;
                let bound = Exact { num: &s_num * &d_exact.num * &sg.den, den: &d_exact.den * &n_big * renewal };
                let got = throughput_bound(TargetRate::new(d).unwrap(), &MacParams::new(n, tau, sigma).unwrap());
                worst = worst.max(bound.rel_err(got));
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-12, || format!("worst relative error {worst:.3e} over {cases} cases"))?;
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{cases} cases, worst relative error {worst:.2e}, {secs:.2}s"))
}

fn within_3se(label: &str, count: u64, total: u64, p: f64) -> Result<String, String> {
    let freq = count as f64 / total as f64;
    let se = (p * (1.0 - p) / total as f64).sqrt();
    let z = (freq - p) / se;
    ensure(z.abs() <= 3.0, || format!("{label}: frequency {freq:.6} vs {p:.6}, z = {z:.2}"))?;
    Ok(format!("{label} z={z:+.2}"))
}

fn contention_agreement() -> Outcome {
    let n = 20;
    let slots = 1_000_000u64;
    let probs = slot_probabilities(&MacParams::new(n, TAU, SIGMA).unwrap());
    let eligible: Vec<NodeId> = (0..n).map(NodeId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2, &[0]));
    let (mut idle, mut success, mut collision) = (0u64, 0u64, 0u64);
    for _ in 0..slots {
        match contend(&eligible, TAU, &mut rng) {
            SlotOutcome::Idle => idle += 1,
            SlotOutcome::Success(_) => success += 1,
            SlotOutcome::Collision(_) => collision += 1,
        }
    }
    let mut parts = vec![
        within_3se("per-slot idle", idle, slots, probs.p_i)?,
        within_3se("per-slot success", success, slots, probs.p_s)?,
        within_3se("per-slot collision", collision, slots, probs.p_c)?,
    ];

    // The engine's default skip sampler over a saturated Direct-Link network.
    let rates = rates_for(n, 11, 1.0);
    let d = TargetRate::new(max_direct_rate(&rates)).unwrap();
    let config = SimConfig {
        tau: TAU,
        sigma: SIGMA,
        seed: derive_seed(2, &[1]),
        stop: StopCondition::Deliveries(u64::MAX),
        ..SimConfig::new(SchemeKind::DirectLink, d)
    };
    let mut sim = Simulator::new(config, &rates).unwrap();
    while sim.idle_slots() + sim.busy_events() < slots {
        sim.step().unwrap();
    }
    let r = sim.report();
    let total = r.idle_slots + r.busy_events();
    parts.push(within_3se("engine idle", r.idle_slots, total, probs.p_i)?);
    parts.push(within_3se("engine success", r.successes, total, probs.p_s)?);
    parts.push(within_3se("engine collision", r.collisions, total, probs.p_c)?);
    Ok(format!("n=20 tau=0.001, 10^6 slots: {}", parts.join(", ")))
}

fn direct_link_oracle() -> Outcome {
    let mut parts = Vec::new();
    for (n, topo_seed, deliveries) in [(5usize, 1u64, 500_000u64), (20, 2, 1_000_000)] {
        let rates = rates_for(n, topo_seed, 1.0);
        let d = TargetRate::new(max_direct_rate(&rates)).unwrap();
        let bound = throughput_bound(d, &MacParams::new(n, TAU, SIGMA).unwrap());
        for scheme in SchemeKind::ALL {
            let report = simulate(
                &rates,
                SimConfig {
                    seed: derive_seed(3, &[n as u64, scheme as u64]),
                    stop: StopCondition::Deliveries(deliveries),
                    ..SimConfig::new(scheme, d)
                },
            );
            let worst = report.nodes.iter().map(|m| (m.throughput / bound - 1.0).abs()).fold(0.0, f64::max);
            ensure(worst <= 0.02, || format!("n={n} {scheme}: worst per-node deviation {:.2}%", 100.0 * worst))?;
            parts.push(format!("n={n} {scheme} {:.2}%", 100.0 * worst));
        }
    }
    Ok(format!("worst per-node deviation from S(D*): {}", parts.join(", ")))
}

/// Topology and channel shared by the degradation criteria.
fn degradation_rates() -> RateTable {
    rates_for(20, 0, 0.1)
}

fn direct_baseline(rates: &RateTable, seed: u64, deliveries: u64) -> f64 {
    let d = TargetRate::new(max_direct_rate(rates)).unwrap();
    simulate(
        rates,
        SimConfig { seed, stop: StopCondition::Deliveries(deliveries), ..SimConfig::new(SchemeKind::DirectLink, d) },
    )
    .min_throughput
}

fn first_kind_degradation() -> Outcome {
    let rates = degradation_rates();
    let scheme = SchemeKind::DecodeForward;
    let lo = max_direct_rate(&rates);
    let hi = max_supported_rate(&rates, scheme);
    let d = TargetRate::new(lo * (hi / lo).powf(0.4)).unwrap();
    let feas = feasibility(&rates, d, scheme);
    ensure(feas.is_supported(), || "chosen target rate is not supported".into())?;
    let bound = throughput_bound(d, &MacParams::new(rates.len(), TAU, SIGMA).unwrap());
    let deliveries = 2_000_000;
    let reps = 4u64;
    let baseline = direct_baseline(&rates, derive_seed(4, &[u64::MAX]), deliveries);

    let qs = [1u32, 2, 3, 5, 8, 12, 17, 25, 40, 70, 100];
    let mut gains = Vec::new();
    let mut ratios = Vec::new();
    for (qi, &q) in qs.iter().enumerate() {
        let thr: Vec<f64> = (0..reps)
            .map(|rep| {
                simulate(
                    &rates,
                    SimConfig {
                        q_limit: q,
                        seed: derive_seed(4, &[qi as u64, rep]),
                        stop: StopCondition::Deliveries(deliveries),
                        ..SimConfig::new(scheme, d)
                    },
                )
                .min_throughput
            })
            .collect();
        let (m, se) = mean_se(&thr);
        gains.push((gain_percent(m, baseline).unwrap(), 100.0 * se / baseline));
        ratios.push(m / bound);
    }
    for (i, w) in gains.windows(2).enumerate() {
        let (g0, s0) = w[0];
        let (g1, s1) = w[1];
        let slack = 2.0 * (s0 * s0 + s1 * s1).sqrt();
        ensure(g1 >= g0 - slack, || {
            format!("gain drops from {g0:.2}% at Q={} to {g1:.2}% at Q={} (slack {slack:.2})", qs[i], qs[i + 1])
        })?;
    }
    let reach = qs.iter().zip(&ratios).find(|(_, &r)| r >= 0.99).map(|(q, _)| *q);
    let q_star =
        reach.ok_or_else(|| format!("best throughput/bound {:.4}", ratios.iter().cloned().fold(0.0, f64::max)))?;
    ensure(gains[0].0 < gains[gains.len() - 1].0, || "no degradation at Q=1".into())?;
    Ok(format!(
        "H={} C={}: gain {:.1}% at Q=1 rising to {:.1}% at Q=100; within 1% of bound from Q={q_star} (ratio {:.4})",
        feas.helpers.len(),
        feas.helped.len(),
        gains[0].0,
        gains[gains.len() - 1].0,
        ratios[qs.iter().position(|&q| q == q_star).unwrap()],
    ))
}

fn second_kind_degradation() -> Outcome {
    let rates = degradation_rates();
    let scheme = SchemeKind::DecodeForward;
    let mac = MacParams::new(rates.len(), TAU, SIGMA).unwrap();
    let deliveries = 400_000;
    let baseline = direct_baseline(&rates, derive_seed(5, &[u64::MAX]), deliveries);
    let lo = max_direct_rate(&rates);
    let hi = 1.15 * max_supported_rate(&rates, scheme);
    let points = 24;
    let mut regimes = Vec::new();
    let mut gains = Vec::new();
    for i in 0..points {
        let d = TargetRate::new(lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).unwrap();
        let report = simulate(
            &rates,
            SimConfig {
                seed: derive_seed(5, &[i as u64]),
                stop: StopCondition::Deliveries(deliveries),
                ..SimConfig::new(scheme, d)
            },
        );
        let bound = throughput_bound(d, &mac);
        let supported = feasibility(&rates, d, scheme).is_supported();
        regimes.push(classify_regime(report.min_throughput, bound, supported, 0.05));
        gains.push(gain_percent(report.min_throughput, baseline).unwrap());
    }
    let code: String = regimes
        .iter()
        .map(|r| match r {
            Regime::BoundTracking => 'B',
            Regime::MacDegraded => 'M',
            Regime::Unsupported => 'U',
        })
        .collect();
    let first = |g: Regime| regimes.iter().position(|&r| r == g);
    let (b, m, u) = match (first(Regime::BoundTracking), first(Regime::MacDegraded), first(Regime::Unsupported)) {
        (Some(b), Some(m), Some(u)) => (b, m, u),
        _ => return Err(format!("missing a regime: {code}")),
    };
    ensure(b < m && m < u, || format!("regimes out of order: {code}"))?;
    ensure(regimes[m..u].iter().all(|&r| r == Regime::MacDegraded), || format!("bound tracking resumes: {code}"))?;
    ensure(regimes[u..].iter().all(|&r| r == Regime::Unsupported), || format!("support resumes: {code}"))?;
    ensure(gains[u..].iter().all(|&g| g == -100.0), || format!("unsupported gain not -100%: {:?}", &gains[u..]))?;
    let peak = gains.iter().cloned().fold(f64::MIN, f64::max);
    Ok(format!("D sweep {code} (B=bound-tracking, M=mac-degraded, U=unsupported); peak gain {peak:.1}%, then -100%"))
}

fn scheme_ordering() -> Outcome {
    let snrs = vec![0.01, 0.1, 1.0];
    let ns = [5usize, 10, 20, 40];
    let mut peaks = Vec::new();
    let mut lines = Vec::new();
    for &n in &ns {
        let mut spec = SweepSpec::new(SweepVariable::TxSnr, snrs.clone());
        spec.replications = 40;
        spec.master_seed = 6;
        spec.schemes = vec![SchemeKind::TwoHop, SchemeKind::DecodeForward];
        spec.fixed.n = n;
        spec.fixed.d_grid_points = 20;
        spec.fixed.deliveries = 100_000;
        let rows = summarize(&experiments::run_sweep(&spec).map_err(|e| e.to_string())?);
        let mut peak_th = f64::MIN;
        let mut peak_df = f64::MIN;
        for &snr in &snrs {
            let row = |s| rows.iter().find(|r| r.value == snr && r.scheme == s).unwrap();
            let th = row(SchemeKind::TwoHop);
            let df = row(SchemeKind::DecodeForward);
            ensure(df.gain_mean >= th.gain_mean, || {
                format!("n={n} snr={snr}: DF {:.1}% < TH {:.1}%", df.gain_mean, th.gain_mean)
            })?;
            ensure(th.gain_mean >= 0.0, || format!("n={n} snr={snr}: TH gain {:.1}% < 0", th.gain_mean))?;
            peak_th = peak_th.max(th.gain_mean);
            peak_df = peak_df.max(df.gain_mean);
            lines.push(format!(
                "n={n} snr={snr}: TH {:.1}±{:.1}% DF {:.1}±{:.1}%",
                th.gain_mean, th.gain_se, df.gain_mean, df.gain_se
            ));
        }
        peaks.push((n, peak_th, peak_df));
    }
    for w in peaks.windows(2) {
        ensure(w[1].1 > w[0].1 && w[1].2 > w[0].2, || {
            format!("peak gains not increasing from n={} to n={}: {peaks:?}", w[0].0, w[1].0)
        })?;
    }
    let (_, th40, df40) = peaks[peaks.len() - 1];
    ensure(df40 > 30.0 && th40 > 15.0, || format!("n=40 peaks TH {th40:.1}% DF {df40:.1}%"))?;
    for l in &lines {
        println!("    {l}");
    }
    let summary: Vec<String> = peaks.iter().map(|(n, t, d)| format!("n={n} TH {t:.1}% DF {d:.1}%")).collect();
    Ok(format!("peak gains {}", summary.join(", ")))
}

fn helper_properties() -> Result<usize, String> {
    let mut checked = 0;
    for seed in 0..100u64 {
        let rates = rates_for(20, derive_seed(7, &[seed]), 0.1);
        let lo = max_direct_rate(&rates);
        let hi = 1.2 * max_supported_rate(&rates, SchemeKind::DecodeForward);
        for i in 0..5 {
            let d = TargetRate::new(lo * (hi / lo).powf(i as f64 / 4.0)).unwrap();
            for k in rates.nodes() {
                let th = helper_set(k, &rates, d, SchemeKind::TwoHop);
                let df = helper_set(k, &rates, d, SchemeKind::DecodeForward);
                ensure(th.is_subset(&df), || format!("seed {seed} node {k}: two-hop helpers not within DF helpers"))?;
                if rates.direct(k) >= d.get() {
                    continue;
                }
                for l in rates.nodes().filter(|&l| l != k) {
                    let (rk, rl, rkl) = (rates.direct(k), rates.direct(l), rates.pair(k, l));
                    let brute_th = rl >= d.get() && rate_two_hop(rkl, rl, d).is_ok_and(|r| r >= d.get());
                    let brute_df = rl >= d.get() && rate_df(rkl, rk, rl, d).is_ok_and(|r| r >= d.get());
                    ensure(brute_th == can_help(&rates, k, l, d, SchemeKind::TwoHop), || {
                        format!("seed {seed}: two-hop closed form disagrees for ({k},{l}) at d={}", d.get())
                    })?;
                    ensure(brute_df == can_help(&rates, k, l, d, SchemeKind::DecodeForward), || {
                        format!("seed {seed}: DF closed form disagrees for ({k},{l}) at d={}", d.get())
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

/// Steps a traced run, checking the queues against the AP after every slot.
fn stepped_run(
    rates: &RateTable,
    config: SimConfig,
    slots: u64,
) -> Result<(fairmac_core::MetricsReport, Vec<TraceRecord>), String> {
    let q_limit = config.q_limit as usize;
    let mut sim = Simulator::new(config, rates).unwrap();
    while sim.idle_slots() + sim.busy_events() < slots {
        if sim.step().map_err(|e| e.to_string())? == Step::Finished {
            break;
        }
        for (l, node) in sim.nodes().iter().enumerate() {
            for ob in &node.queue {
                let (origin, seq) = ob.packet.key();
                ensure(!sim.ap().is_delivered(origin, seq), || {
                    format!("node {l} holds delivered packet {origin}:{seq}")
                })?;
            }
        }
    }
    let report = sim.report();
    ensure(report.peak_obligation_memory <= q_limit * rates.len(), || {
        format!("peak memory {} above Q*N", report.peak_obligation_memory)
    })?;
    for (k, m) in report.nodes.iter().enumerate() {
        ensure(sim.ap().delivered_count(NodeId(k)) == m.delivered_packets, || format!("node {k}: AP count mismatch"))?;
    }
    Ok((report, sim.into_trace()))
}

fn check_trace(report: &fairmac_core::MetricsReport, trace: &[TraceRecord]) -> Result<(), String> {
    let mut seen = HashSet::new();
    let mut credited = vec![0u64; report.nodes.len()];
    for rec in trace {
        if let TraceRecord::Success { transmitter, kind, packet, delivered: true, .. } = rec {
            ensure(seen.insert(*packet), || format!("packet {}:{} delivered twice", packet.0, packet.1))?;
            credited[packet.0 .0] += 1;
            if *kind == TxKind::Joint {
                credited[transmitter.0] += 1;
            }
        }
    }
    for (k, m) in report.nodes.iter().enumerate() {
        ensure(credited[k] == m.delivered_packets, || {
            format!("node {k}: trace credits {} but report says {}", credited[k], m.delivered_packets)
        })?;
    }
    let busy = trace.len() as u64;
    ensure(busy == report.busy_events(), || "trace length differs from busy count".into())?;
    let expected = SIGMA * report.idle_slots as f64 + (1.0 + SIGMA) * busy as f64;
    ensure((report.elapsed_time - expected).abs() <= 1e-9 * expected, || {
        format!("elapsed {} vs sigma*I + (1+sigma)*B = {expected}", report.elapsed_time)
    })?;
    Ok(())
}

fn property_suite() -> Outcome {
    let pairs = helper_properties()?;

    let mut runs = 0;
    for topo_seed in 0..4u64 {
        let rates = rates_for(20, derive_seed(7, &[1000 + topo_seed]), 0.1);
        let lo = max_direct_rate(&rates);
        for scheme in [SchemeKind::TwoHop, SchemeKind::DecodeForward] {
            let hi = max_supported_rate(&rates, scheme);
            for (di, frac) in [0.3, 0.8, 1.0].into_iter().enumerate() {
                for q in [1u32, 3, 100] {
                    for contention in [ContentionMode::Skip, ContentionMode::PerSlot] {
                        let config = SimConfig {
                            q_limit: q,
                            seed: derive_seed(7, &[topo_seed, di as u64, q as u64]),
                            stop: StopCondition::Deliveries(u64::MAX),
                            contention,
                            trace: true,
                            ..SimConfig::new(scheme, TargetRate::new(lo * (hi / lo).powf(frac)).unwrap())
                        };
                        let (report, trace) = stepped_run(&rates, config, 10_000)?;
                        check_trace(&report, &trace)?;
                        runs += 1;
                    }
                }
            }
        }
    }

    let rates = rates_for(5, 1, 1.0);
    let d = TargetRate::new(max_direct_rate(&rates)).unwrap();
    let mut parity = Vec::new();
    for scheme in SchemeKind::ALL {
        let config = SimConfig {
            seed: derive_seed(7, &[9, scheme as u64]),
            stop: StopCondition::Deliveries(200_000),
            ..SimConfig::new(scheme, d)
        };
        let report = simulate(&rates, config.clone());
        let total: u64 = report.nodes.iter().map(|m| m.tx_count).sum();
        let p = 1.0 / rates.len() as f64;
        let se = (total as f64 * p * (1.0 - p)).sqrt();
        for (k, m) in report.nodes.iter().enumerate() {
            let z = (m.tx_count as f64 - total as f64 * p) / se;
            ensure(z.abs() <= 3.0, || format!("{scheme}: node {k} tx_count z = {z:.2}"))?;
            parity.push(z.abs());
        }
        let again = simulate(&rates, config);
        ensure(report == again, || format!("{scheme}: rerun under the same seed differs"))?;
        let traced = |s| {
            let mut c = SimConfig {
                seed: s,
                stop: StopCondition::Deliveries(20_000),
                trace: true,
                ..SimConfig::new(scheme, d)
            };
            c.contention = ContentionMode::PerSlot;
            let mut sim = Simulator::new(c, &rates).unwrap();
            sim.run_to_end().unwrap();
            sim.into_trace()
        };
        ensure(traced(5) == traced(5), || format!("{scheme}: traced rerun differs"))?;
    }
    let worst_z = parity.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "{pairs} helper pairs agree, {runs} stepped runs clean, tx parity worst |z| {worst_z:.2}, reruns bit-identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (1, "analytic oracle exactness", analytic_exactness),
        (2, "contention-layer agreement", contention_agreement),
        (3, "direct-link oracle", direct_link_oracle),
        (4, "first-kind degradation", first_kind_degradation),
        (5, "second-kind degradation", second_kind_degradation),
        (6, "scheme ordering", scheme_ordering),
        (7, "property suite", property_suite),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
